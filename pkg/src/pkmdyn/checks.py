"""Numerical self-checks: finite-difference Jacobians, loop residuals,
power balance and the 3-fold symmetry of the Delta J_IK."""
from __future__ import annotations

import importlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import inverse_dynamics, power_terms
from .limb_kin import (AssembledPKM, LimbModel, LimbState, chart_coords, limb_acceleration_ik,
                       limb_velocity_ik, manipulator_ik)
from .se3 import ROTATION_Z, TRANSLATION, log_se3, rot_z
from .tree_kin import KinematicsCache

FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (limit {self.limit:.1e}) {self.detail}".rstrip()


def rel_err(A, B, floor: float = 1e-8) -> float:
    """Max-norm difference relative to the larger operand (at least ``floor``)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    scale = max(np.max(np.abs(A)) if A.size else 0.0, np.max(np.abs(B)) if B.size else 0.0, floor)
    return float(np.max(np.abs(A - B)) / scale) if A.size else 0.0


def reference_x(pkm: AssembledPKM) -> np.ndarray:
    lb = pkm.limbs[0]
    return chart_coords(pkm, KinematicsCache(lb.tree, np.zeros(lb.n)).C[lb.platform - 1])


def random_task_state(pkm: AssembledPKM, rng, radius: float = 0.05):
    d = pkm.dof
    x = reference_x(pkm) + radius * rng.uniform(-1.0, 1.0, d)
    V = rng.normal(size=d) * 0.5
    A = rng.normal(size=d)
    return x, V, A


def fd_limb_errors(limb: LimbModel, theta, Vt, h: float = FD_STEP) -> dict:
    """Relative errors of analytic J, Jdot, H, Hdot, F, Fdot against central
    differences at a configuration on the constraint manifold."""
    r = limb_acceleration_ik(limb, theta, Vt, np.zeros_like(Vt))
    st = r.state
    kin = st.kin
    n = limb.n
    dth = r.thetad
    # rates are compared relative to |base matrix| * |thetadot| since they
    # may vanish identically (e.g. a constant H)
    w = float(np.max(np.abs(dth)))
    out = {"J": 0.0, "Jdot": 0.0, "H": 0.0, "Hdot": 0.0, "F": 0.0, "Fdot": 0.0}
    # body Jacobians, column by column
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        kp = KinematicsCache(limb.tree, theta + e)
        km = KinematicsCache(limb.tree, theta - e)
        for k in range(n):
            C = kin.C[k]
            col = (log_se3(C.inv() @ kp.C[k]) - log_se3(C.inv() @ km.C[k])) / (2.0 * h)
            out["J"] = max(out["J"], rel_err(col, kin.J[k][:, i]))
    kp = KinematicsCache(limb.tree, theta + h * dth)
    km = KinematicsCache(limb.tree, theta - h * dth)
    out["Jdot"] = max(rel_err((kp.J[k] - km.J[k]) / (2.0 * h), kin.Jd[k],
                                  np.max(np.abs(kin.J[k])) * w) for k in range(n))
    # H along the motion; its columns span the null space of G
    stp = LimbState(limb, theta + h * dth)
    stm = LimbState(limb, theta - h * dth)
    out["Hdot"] = rel_err((stp.H - stm.H) / (2.0 * h), st.Hd, np.max(np.abs(st.H)) * w)
    if limb.loops.cycles:
        G = limb.loops.constraint_jacobian(kin)
        out["H"] = float(np.max(np.abs(G @ st.H)) / max(np.max(np.abs(G)), 1e-12))
    Fp = limb_velocity_ik(limb, theta + h * dth, Vt).F
    Fm = limb_velocity_ik(limb, theta - h * dth, Vt).F
    out["Fdot"] = rel_err((Fp - Fm) / (2.0 * h), r.Fd, np.max(np.abs(r.F)) * w)
    # F: L_t F = D_t
    out["F"] = rel_err(st.Lt @ r.F, limb.Dt)
    return out


def check_jacobians(pkm: AssembledPKM, rng, samples: int = 3, tol: float = 1e-6) -> CheckResult:
    worst, where = 0.0, ""
    for _ in range(samples):
        x, V, _ = random_task_state(pkm, rng)
        ik = manipulator_ik(pkm, x, V)
        for li, (lb, th) in enumerate(zip(pkm.limbs, ik.thetas)):
            for key, val in fd_limb_errors(lb, th, V).items():
                if val > worst:
                    worst, where = val, f"worst: {key} of limb {li + 1}"
    return CheckResult("jacobians_vs_fd", worst <= tol, worst, tol, where)


def check_loop_residual(pkm: AssembledPKM, rng, samples: int = 5, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for _ in range(samples):
        x, V, _ = random_task_state(pkm, rng)
        ik = manipulator_ik(pkm, x, V)
        for lb, th in zip(pkm.limbs, ik.thetas):
            if lb.loops.cycles:
                res = lb.loops.residual(KinematicsCache(lb.tree, th))
                worst = max(worst, float(np.max(np.abs(res))))
    return CheckResult("loop_residual", worst <= tol, worst, tol)


def check_power_balance(pkm: AssembledPKM, rng, samples: int = 5, tol: float = 1e-7) -> CheckResult:
    worst = 0.0
    for _ in range(samples):
        x, V, A = random_task_state(pkm, rng)
        W = rng.normal(size=6)
        r = inverse_dynamics(pkm, x, V, A, W)
        p_in, rate = power_terms(pkm, r.thetas, V, A, r.u, W)
        worst = max(worst, abs(p_in - rate) / max(1.0, abs(p_in)))
    return CheckResult("power_balance", worst <= tol, worst, tol)


def symmetry_error(pkm: AssembledPKM) -> float:
    """Deviation of J_IK at theta = 0 from invariance under cyclic relabeling
    of three 120-degree limbs composed with the taskspace rotation."""
    x = reference_x(pkm)
    ik = manipulator_ik(pkm, x, np.zeros(pkm.dof))
    J = ik.J_IK
    R = rot_z(2.0 * np.pi / 3.0)
    perm = [1, 2, 0]
    return float(np.max(np.abs(J[perm] - J @ R.T)))


def check_symmetry(pkm: AssembledPKM, tol: float = 1e-10) -> CheckResult | None:
    if pkm.L != 3 or pkm.chart != TRANSLATION:
        return None
    err = symmetry_error(pkm)
    return CheckResult("symmetry_120deg", err <= tol, err, tol)


def _load_oracle():
    root = Path(__file__).resolve().parents[2] / "tests"
    if not (root / "oracle_dae.py").exists():
        return None
    if str(root) not in sys.path:
        sys.path.insert(0, str(root))
    return importlib.import_module("oracle_dae")


def check_oracle(pkm: AssembledPKM, rng, samples: int = 3, tol: float = 1e-6) -> CheckResult | None:
    """Inverse dynamics against the maximal-coordinate DAE oracle of the
    test suite (only available in a source checkout)."""
    oracle = _load_oracle()
    if oracle is None:
        return None
    worst = 0.0
    for _ in range(samples):
        x, V, A = random_task_state(pkm, rng, 0.1 if pkm.chart == ROTATION_Z else 0.05)
        r = inverse_dynamics(pkm, x, V, A)
        u_ref = oracle.oracle_inverse_dynamics(pkm, r.thetas, V, A)
        worst = max(worst, float(np.max(np.abs(r.u - u_ref)) / max(np.max(np.abs(u_ref)), 1e-12)))
    return CheckResult("oracle_equivalence", worst <= tol, worst, tol)


def run_checks(pkm: AssembledPKM, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = [check_jacobians(pkm, rng), check_loop_residual(pkm, rng), check_power_balance(pkm, rng)]
    for extra in (check_symmetry(pkm), check_oracle(pkm, rng)):
        if extra is not None:
            out.append(extra)
    return out
