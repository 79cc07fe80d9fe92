"""Command-line front end: inverse dynamics along trajectories, forward
simulation, invariant checks and serial/parallel benchmarks."""
from __future__ import annotations

import csv
import io
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
from scipy.interpolate import CubicSpline

from .checks import reference_x, run_checks
from .dynamics import (ParallelEvaluator, default_threads, inverse_dynamics, limb_node,
                       platform_node, simulate, taskspace_eom, _reduce)
from .errors import DivergenceError, PKMError, SingularityError, ValidationError
from .limb_kin import AssembledPKM, manipulator_ik
from .models import load_model
from .se3 import TRANSLATION

EXIT_VALIDATION, EXIT_SINGULAR, EXIT_DIVERGED = 2, 3, 4
DEFAULT_AMP = (0.3, 0.4, 0.1)
FMT = ".12g"


# --- trajectories ------------------------------------------------------------

@dataclass
class TrajectorySpec:
    """Sinusoidal straight-line motion x(t) = origin + amp sin(2 pi t / T),
    or samples read from a CSV file (columns t, x1..xd and optionally
    v1..vd, a1..ad)."""

    kind: str
    origin: np.ndarray
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(1))
    period: float = 10.0
    dt: float = 0.01
    duration: float = 10.0
    samples: tuple | None = None

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValidationError("trajectory step dt must be positive")
        if self.duration < 0.0:
            raise ValidationError("trajectory duration must be non-negative")
        if self.kind == "sinusoid" and self.period <= 0.0:
            raise ValidationError("sinusoid period must be positive")

    def times(self) -> np.ndarray:
        n = int(round(self.duration / self.dt))
        return np.arange(n + 1) * self.dt

    def sample(self, t: float):
        """(x, V_t, Vdot_t) at time ``t``."""
        if self.kind == "sinusoid":
            w = 2.0 * np.pi / self.period
            s, c = np.sin(w * t), np.cos(w * t)
            return (self.origin + self.amplitude * s, self.amplitude * w * c,
                    -self.amplitude * w * w * s)
        xs, vs, as_ = self.samples
        return xs(t), vs(t), as_(t)


def parse_trajectory(spec: str | None, pkm: AssembledPKM, dt: float | None = None,
                     duration: float | None = None) -> TrajectorySpec:
    """``spec`` is None/"sinusoid" (defaults), "sinusoid:amp=..;T=..;origin=.."
    or the path of a CSV file."""
    d = pkm.dof
    origin = reference_x(pkm)
    amp = np.array(DEFAULT_AMP) if (d == 3 and pkm.chart == TRANSLATION) else np.full(d, 0.1)
    T = 10.0
    if spec is None or spec.startswith("sinusoid"):
        if spec and ":" in spec:
            for item in spec.split(":", 1)[1].split(";"):
                if not item.strip():
                    continue
                key, _, val = item.partition("=")
                vals = np.array([float(v) for v in val.split(",")])
                if key == "amp":
                    amp = vals
                elif key == "T":
                    T = float(vals[0])
                elif key == "origin":
                    origin = vals
                else:
                    raise ValidationError(f"unknown trajectory parameter {key!r}")
        if amp.size != d or origin.size != d:
            raise ValidationError(f"trajectory vectors must have {d} components")
        return TrajectorySpec("sinusoid", origin, amp, T, 0.01 if dt is None else dt,
                              T if duration is None else duration)
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"trajectory file {spec} not found")
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    t = np.asarray(data["t"], dtype=float)
    X = np.column_stack([data[f"x{i + 1}"] for i in range(d)])
    sx = CubicSpline(t, X)
    if all(f"v{i + 1}" in names for i in range(d)):
        V = np.column_stack([data[f"v{i + 1}"] for i in range(d)])
        sv = CubicSpline(t, V)
    else:
        sv = sx.derivative(1)
    if all(f"a{i + 1}" in names for i in range(d)):
        A = np.column_stack([data[f"a{i + 1}"] for i in range(d)])
        sa = CubicSpline(t, A)
    else:
        sa = sv.derivative(1) if sv is not sx else sx.derivative(2)
    step = float(np.median(np.diff(t))) if dt is None else dt
    dur = float(t[-1] - t[0]) if duration is None else duration
    return TrajectorySpec("csv", X[0], np.zeros(d), 1.0, step, dur, (sx, sv, sa))


# --- inverse dynamics along a trajectory -------------------------------------

@dataclass
class InvDynTrace:
    t: np.ndarray
    x: np.ndarray
    theta_act: np.ndarray
    u: np.ndarray
    thetas: list           # per sample: list of per-limb joint vectors
    iterations: np.ndarray  # per sample and limb
    residuals: np.ndarray


def run_invdyn(pkm: AssembledPKM, traj: TrajectorySpec, evaluator=None, fixed_iter=None,
               W_EE=None, predictor: bool = False) -> InvDynTrace:
    """Inverse dynamics at every trajectory sample. IK is warm-started from
    the previous sample's joint angles (or, with ``predictor``, from their
    second-order Taylor extrapolation)."""
    ts = traj.times()
    xs, acts, us, ths, its, res = [], [], [], [], [], []
    guesses = None
    prev = None
    for k, t in enumerate(ts):
        x, V, A = traj.sample(t)
        if prev is not None:
            guesses = prev.predict(ts[k] - ts[k - 1]) if predictor else prev.thetas
        try:
            if evaluator is None:
                r = inverse_dynamics(pkm, x, V, A, W_EE, guesses, fixed_iter=fixed_iter)
            else:
                r = evaluator(x, V, A, W_EE, guesses, fixed_iter=fixed_iter)
        except (SingularityError, DivergenceError) as exc:
            exc.t = float(t)
            raise
        prev = r
        xs.append(x)
        acts.append(r.actuated(pkm))
        us.append(r.u)
        ths.append(r.thetas)
        its.append(r.iterations)
        res.append(_ik_residual(pkm, x, r.thetas))
    return InvDynTrace(ts, np.array(xs), np.array(acts), np.array(us), ths, np.array(its),
                       np.array(res))


def _ik_residual(pkm, x, thetas) -> float:
    from .limb_kin import LimbState, _loop_correction, _pose_error, chart_pose
    Cdes = chart_pose(pkm, x)
    worst = 0.0
    for lb, th in zip(pkm.limbs, thetas):
        st = LimbState(lb, th)
        e = _pose_error(lb, st.platform_pose, Cdes)
        _, lres = _loop_correction(lb, st)
        worst = max(worst, float(np.max(np.abs(e))) if e.size else 0.0, lres)
    return worst


def invdyn_header(pkm: AssembledPKM) -> list:
    d = pkm.dof
    n_act = pkm.n_act
    head = ["t"] + [f"x{i + 1}" for i in range(d)]
    head += [f"theta_act{i + 1}" for i in range(n_act)] + [f"u{i + 1}" for i in range(n_act)]
    for l, lb in enumerate(pkm.limbs, start=1):
        head += [f"limb{l}_theta{j}" for j in range(1, lb.n + 1)]
    return head


def _fmt(v) -> str:
    return format(float(v), FMT)


def write_invdyn_csv(pkm: AssembledPKM, tr: InvDynTrace, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(invdyn_header(pkm))
    for k in range(len(tr.t)):
        row = [tr.t[k], *tr.x[k], *tr.theta_act[k], *tr.u[k]]
        for th in tr.thetas[k]:
            row += list(th)
        w.writerow([_fmt(v) for v in row])


# --- helpers -----------------------------------------------------------------

def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _run(fn):
    """Map library errors to exit codes."""
    try:
        return fn()
    except SingularityError as exc:
        where = f" at t = {exc.t:.6g}" if getattr(exc, "t", None) is not None else ""
        click.echo(f"error: singular configuration{where}: {exc}", err=True)
        sys.exit(EXIT_SINGULAR)
    except DivergenceError as exc:
        where = f" at t = {exc.t:.6g}" if getattr(exc, "t", None) is not None else ""
        click.echo(f"error: no convergence{where}: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except (ValidationError, PKMError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _evaluator(pkm, parallel):
    if parallel is None:
        return None
    return ParallelEvaluator(pkm, parallel if parallel > 0 else None)


model_opt = click.option("--model", "model", required=True,
                         help="Model file (JSON) or name of a shipped model.")
traj_opt = click.option("--traj", "traj", default=None,
                        help="'sinusoid[:amp=..;T=..;origin=..]' or a CSV file.")
parallel_opt = click.option("--parallel", "parallel", type=int, is_flag=False, flag_value=0,
                            default=None, help="Evaluate limbs in parallel (optional width).")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Kinematics and dynamics of parallel kinematic manipulators."""


@main.command("invdyn")
@model_opt
@traj_opt
@click.option("--dt", type=float, default=None, help="Sampling step [s].")
@click.option("--duration", type=float, default=None, help="Duration [s].")
@parallel_opt
@click.option("--out", "out", default=None, help="Output CSV (default stdout).")
def cmd_invdyn(model, traj, dt, duration, parallel, out):
    """Inverse dynamics along a trajectory; CSV output."""

    def go():
        pkm = load_model(model)
        tr_spec = parse_trajectory(traj, pkm, dt, duration)
        ev = _evaluator(pkm, parallel)
        try:
            tr = run_invdyn(pkm, tr_spec, ev)
        finally:
            if ev is not None:
                ev.close()
        fh, close = _open_out(out)
        try:
            write_invdyn_csv(pkm, tr, fh)
        finally:
            if close:
                fh.close()

    _run(go)


@main.command("simulate")
@model_opt
@traj_opt
@click.option("--u-source", "u_source", default="invdyn",
              help="'invdyn' (replay inverse dynamics of --traj) or CSV with t,u1..un.")
@click.option("--dt", type=float, default=1e-4, show_default=True, help="Integrator step [s].")
@click.option("--duration", type=float, default=1.0, show_default=True, help="Duration [s].")
@click.option("--u-dt", "u_dt", type=float, default=1e-3, show_default=True,
              help="Sampling step of the replayed inverse-dynamics torques [s].")
@parallel_opt
@click.option("--out", "out", default=None, help="Output CSV (default stdout).")
def cmd_simulate(model, traj, u_source, dt, duration, u_dt, parallel, out):
    """Forward dynamics (RK4 with re-projection); CSV state history."""

    def go():
        pkm = load_model(model)
        tr_spec = parse_trajectory(traj, pkm, u_dt, duration)
        u_fn = replay_torques(pkm, tr_spec, u_source, parallel)
        x0, V0, _ = tr_spec.sample(0.0)
        res = simulate(pkm, x0, V0, lambda t, s: u_fn(t), duration, dt)
        fh, close = _open_out(out)
        try:
            write_sim_csv(pkm, res, fh)
        finally:
            if close:
                fh.close()
        track = max(float(np.max(np.abs(res.x[k] - tr_spec.sample(t)[0])))
                    for k, t in enumerate(res.t))
        click.echo(f"max loop residual {res.loop_residual.max():.3e}; "
                   f"max tracking deviation {track:.3e}; "
                   f"max power residual {res.power_residual.max():.3e}", err=True)

    _run(go)


def replay_torques(pkm, tr_spec: TrajectorySpec, u_source: str, parallel=None):
    """Cubic-spline interpolant u(t) of inverse-dynamics torques (or of a CSV)."""
    if u_source == "invdyn":
        ev = _evaluator(pkm, parallel)
        try:
            tr = run_invdyn(pkm, tr_spec, ev)
        finally:
            if ev is not None:
                ev.close()
        return CubicSpline(tr.t, tr.u)
    path = Path(u_source)
    if not path.exists():
        raise ValidationError(f"torque file {u_source} not found")
    data = np.genfromtxt(path, delimiter=",", names=True)
    t = np.asarray(data["t"], dtype=float)
    U = np.column_stack([data[f"u{i + 1}"] for i in range(pkm.n_act)])
    return CubicSpline(t, U)


def write_sim_csv(pkm, res, out) -> None:
    d, n_act = pkm.dof, pkm.n_act
    w = csv.writer(out, lineterminator="\n")
    head = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
    head += [f"theta_act{i + 1}" for i in range(n_act)] + [f"u{i + 1}" for i in range(n_act)]
    head += ["loop_residual", "power_residual"]
    w.writerow(head)
    for k in range(len(res.t)):
        row = [res.t[k], *res.x[k], *res.Vt[k], *res.theta_act[k], *res.u[k],
               res.loop_residual[k], res.power_residual[k] if len(res.power_residual) else 0.0]
        w.writerow([_fmt(v) for v in row])


# --- benchmark ---------------------------------------------------------------

@dataclass
class BenchReport:
    rows: list   # (label, microseconds per evaluation)
    evals: int
    threads: int

    def text(self) -> str:
        lines = [f"evaluations: {self.evals}, workers: {self.threads} "
                 "(absolute timings are hardware-dependent)"]
        for label, us in self.rows:
            lines.append(f"{label:<48s} {us:12.2f} us/eval")
        return "\n".join(lines)


def bench(pkm: AssembledPKM, traj: TrajectorySpec, evals: int, threads: int | None = None,
          ik_iters: int = 2) -> BenchReport:
    """Timings per evaluation along ``traj`` (cycled): IK + inverse dynamics
    (serial), IK + task-space EOM (serial), parallel inverse dynamics with
    per-node times."""
    ts = traj.times()
    samples = [traj.sample(t) for t in ts]
    ref = run_invdyn(pkm, TrajectorySpec(traj.kind, traj.origin, traj.amplitude, traj.period,
                                         traj.dt, traj.duration, traj.samples))
    guesses = ref.thetas
    m = len(samples)

    def loop(fn):
        t0 = time.perf_counter()
        for k in range(evals):
            i = k % m
            fn(i, samples[i])
        return (time.perf_counter() - t0) / evals * 1e6

    rows = []
    rows.append(("Exp 1  IK + inverse dynamics (serial)",
                 loop(lambda i, s: inverse_dynamics(pkm, s[0], s[1], s[2], None, guesses[i],
                                                    fixed_iter=ik_iters))))

    def eom(i, s):
        ik = manipulator_ik(pkm, s[0], s[1], s[2], guesses[i], fixed_iter=ik_iters)
        return taskspace_eom(pkm, s[0], s[1], ik=ik)

    rows.append(("Exp 2  IK + task-space EOM (serial)", loop(eom)))
    nthreads = default_threads(threads, pkm.L)
    node_t = np.zeros(pkm.L + 1)
    from concurrent.futures import ThreadPoolExecutor

    def timed_limb(l, lb, s, g):
        t0 = time.perf_counter()
        out = limb_node(lb, pkm, s[0], s[1], s[2], g, fixed_iter=ik_iters)
        node_t[l] += time.perf_counter() - t0
        return out

    def timed_platform(s):
        t0 = time.perf_counter()
        out = platform_node(pkm, s[0], s[1], s[2])
        node_t[-1] += time.perf_counter() - t0
        return out

    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        def par(i, s):
            futs = [pool.submit(timed_limb, l, lb, s, guesses[i][l])
                    for l, lb in enumerate(pkm.limbs)]
            fp = pool.submit(timed_platform, s)
            return _reduce(pkm, [f.result() for f in futs], fp.result())

        rows.append((f"Exp 3  IK + inverse dynamics (parallel, {nthreads} workers)", loop(par)))
    for l in range(pkm.L):
        rows.append((f"Exp 3.{l + 1} limb {l + 1} node", node_t[l] / evals * 1e6))
    rows.append(("       platform node", node_t[-1] / evals * 1e6))
    return BenchReport(rows, evals, nthreads)


@main.command("bench")
@model_opt
@traj_opt
@click.option("--evals", type=int, default=100000, show_default=True,
              help="Number of evaluations per experiment.")
@click.option("--threads", type=int, default=None, help="Worker count (default L + 1).")
@click.option("--ik-iters", "ik_iters", type=int, default=2, show_default=True,
              help="Fixed number of IK iterations per evaluation.")
@click.option("--dt", type=float, default=None, help="Trajectory sampling step [s].")
def cmd_bench(model, traj, evals, threads, ik_iters, dt):
    """Serial vs parallel timing report."""

    def go():
        pkm = load_model(model)
        tr_spec = parse_trajectory(traj, pkm, dt)
        rep = bench(pkm, tr_spec, evals, threads, ik_iters)
        click.echo(rep.text())

    _run(go)


@main.command("check")
@model_opt
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of sampled states.")
def cmd_check(model, seed):
    """Run the invariant suite; nonzero exit on failure."""

    def go():
        pkm = load_model(model)
        results = run_checks(pkm, seed)
        for r in results:
            click.echo(r.line())
        if not all(r.passed for r in results):
            sys.exit(1)

    _run(go)


if __name__ == "__main__":
    main()
