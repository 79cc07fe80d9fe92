"""Equations of motion of PKMs with complex limbs.

Levels: tree system of a limb without the platform, projected limb
(constraint embedding), platform Newton-Euler, task space and actuator space.
Friction enters the tree equations as the term ``Qbar = c * thetadot`` on the
left-hand side, i.e. as an applied force ``-c * thetadot``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, SingularityError, ValidationError
from .limb_kin import (IK_TOL, AssembledPKM, LimbIKResult, LimbModel, LimbState, actuator_rows,
                       chart_coords, chart_pose, limb_acceleration_ik, limb_geometric_ik,
                       manipulator_ik)
from .se3 import Pose, gyroscopic_matrix
from .tree_kin import KinematicsCache

OtherForces = Callable[[LimbModel, np.ndarray, np.ndarray], np.ndarray]


def _mass_matrices(limb: LimbModel) -> list:
    Ms = getattr(limb, "_Ms", None)
    if Ms is None:
        Ms = [I.matrix() for I in limb.inertias]
        limb._Ms = Ms
    return Ms


def gravity_wrench(M: np.ndarray, R: np.ndarray, g0) -> np.ndarray:
    """Body-fixed gravity term W_grav = -M (0, R^T g0) (left-hand side)."""
    return -M[:, 3:] @ (R.T @ g0)


# --- tree level --------------------------------------------------------------

@dataclass
class TreeEOMTerms:
    M: np.ndarray
    C: np.ndarray
    Qgrav: np.ndarray
    Q: np.ndarray
    bar: list


def tree_eom(limb: LimbModel, kin: KinematicsCache, g0, others: OtherForces | None = None) -> TreeEOMTerms:
    """Mass, Coriolis, gravity and other generalized forces of the limb's
    tree without the platform, in the coordinates ``theta[bar]``."""
    bar = limb.bar
    cols = [j - 1 for j in bar]
    nb = len(bar)
    Ms = _mass_matrices(limb)
    g0 = np.asarray(g0, dtype=float)
    M = np.zeros((nb, nb))
    C = np.zeros((nb, nb))
    Qg = np.zeros(nb)
    for j in bar:
        Mi = Ms[j - 1]
        Ji = kin.J[j - 1][:, cols]
        MJ = Mi @ Ji
        M += Ji.T @ MJ
        if kin.V is not None:
            Jdi = kin.Jd[j - 1][:, cols]
            C += Ji.T @ (Mi @ Jdi + gyroscopic_matrix(kin.V[j - 1]) @ MJ)
        Qg += Ji.T @ gravity_wrench(Mi, kin.C[j - 1].R, g0)
    Q = np.zeros(nb)
    if kin.dtheta is not None:
        Q = limb.friction[cols] * kin.dtheta[cols]
        if others is not None:
            Q = Q + np.asarray(others(limb, kin.theta, kin.dtheta), dtype=float)[cols]
    return TreeEOMTerms(M, C, Qg, Q, list(bar))


def eval_phi(limb: LimbModel, kin: KinematicsCache, ddtheta, g0,
             others: OtherForces | None = None) -> np.ndarray:
    """phi = M thetadd + C thetad + Qgrav + Q over the platform-excluded tree,
    evaluated body by body without forming the matrices."""
    bar = limb.bar
    cols = [j - 1 for j in bar]
    Ms = _mass_matrices(limb)
    g0 = np.asarray(g0, dtype=float)
    dth = kin.dtheta
    ddth = np.asarray(ddtheta, dtype=float)
    phi = np.zeros(len(bar))
    for j in bar:
        Mi = Ms[j - 1]
        Ji = kin.J[j - 1]
        V = Ji @ dth
        Vd = Ji @ ddth + kin.Jd[j - 1] @ dth
        W = Mi @ Vd + gyroscopic_matrix(V) @ (Mi @ V) + gravity_wrench(Mi, kin.C[j - 1].R, g0)
        phi += Ji[:, cols].T @ W
    phi += limb.friction[cols] * dth[cols]
    if others is not None:
        phi += np.asarray(others(limb, kin.theta, dth), dtype=float)[cols]
    return phi


@dataclass
class ProjectedTerms:
    M: np.ndarray
    C: np.ndarray
    Qgrav: np.ndarray
    Q: np.ndarray
    Hbar: np.ndarray
    Hdbar: np.ndarray


def bar_blocks(limb: LimbModel, H: np.ndarray, Hd: np.ndarray | None):
    """H and Hdot restricted to the rows of bar joints and the columns of q-bar."""
    rows = [j - 1 for j in limb.bar]
    Hb = H[np.ix_(rows, limb.qbar)]
    Hdb = None if Hd is None else Hd[np.ix_(rows, limb.qbar)]
    return Hb, Hdb


def projected_limb_eom(limb: LimbModel, tree_terms: TreeEOMTerms, H, Hd) -> ProjectedTerms:
    Hb, Hdb = bar_blocks(limb, H, Hd)
    M = Hb.T @ tree_terms.M @ Hb
    C = Hb.T @ (tree_terms.M @ Hdb + tree_terms.C @ Hb)
    return ProjectedTerms(M, C, Hb.T @ tree_terms.Qgrav, Hb.T @ tree_terms.Q, Hb, Hdb)


# --- platform ---------------------------------------------------------------

def platform_ne(Mp: np.ndarray, Vp, Vpd, Cp: Pose, g0) -> np.ndarray:
    """Left-hand side M_p Vd_p + G_p M_p V_p + W_grav of the platform."""
    Vp = np.asarray(Vp, dtype=float)
    return Mp @ np.asarray(Vpd, dtype=float) + gyroscopic_matrix(Vp) @ (Mp @ Vp) \
        + gravity_wrench(Mp, Cp.R, g0)


# --- task space --------------------------------------------------------------

@dataclass
class TaskEOMTerms:
    M: np.ndarray
    C: np.ndarray
    Wgrav: np.ndarray
    W: np.ndarray
    J_IK: np.ndarray
    Jd_IK: np.ndarray | None
    ik: object = None

    def phi(self, Vt, Vtd) -> np.ndarray:
        return self.M @ Vtd + self.C @ Vt + self.Wgrav + self.W


def _platform_pose(pkm: AssembledPKM, ik) -> Pose:
    r = ik.results[0]
    return r.state.platform_pose


def taskspace_eom(pkm: AssembledPKM, x, Vt, guesses=None, ik=None,
                  others: OtherForces | None = None, tol: float = IK_TOL) -> TaskEOMTerms:
    """Assemble M_t, C_t, W_t^grav, W_t and J_IK at (x, V_t)."""
    Vt = np.asarray(Vt, dtype=float)
    if ik is None:
        ik = manipulator_ik(pkm, x, Vt, np.zeros_like(Vt), guesses, tol)
    d = pkm.dof
    Mt = np.zeros((d, d))
    Ct = np.zeros((d, d))
    Wg = np.zeros(d)
    Wo = np.zeros(d)
    for lb, r in zip(pkm.limbs, ik.results):
        st = r.state
        tt = tree_eom(lb, st.kin, pkm.gravity, others)
        pt = projected_limb_eom(lb, tt, st.H, st.Hd)
        Fb = r.F[lb.qbar]
        Fdb = r.Fd[lb.qbar]
        Mt += Fb.T @ pt.M @ Fb
        Ct += Fb.T @ (pt.C @ Fb + pt.M @ Fdb)
        Wg += Fb.T @ pt.Qgrav
        Wo += Fb.T @ pt.Q
    Mp = pkm.platform_inertia.matrix()
    Pp = pkm.Pp
    Vp = Pp @ Vt
    Cp = _platform_pose(pkm, ik)
    Mt += Pp.T @ Mp @ Pp
    Ct += Pp.T @ gyroscopic_matrix(Vp) @ Mp @ Pp
    Wg += Pp.T @ gravity_wrench(Mp, Cp.R, pkm.gravity)
    return TaskEOMTerms(Mt, Ct, Wg, Wo, ik.J_IK, ik.Jd_IK, ik)


@dataclass
class ActuatorTerms:
    M: np.ndarray
    C: np.ndarray
    Qgrav: np.ndarray
    Q: np.ndarray
    J_FK: np.ndarray


def actuator_eom(task: TaskEOMTerms, W_EE=None, Pp=None) -> ActuatorTerms:
    """M_a = J_FK^T M_t J_FK, C_a = J_FK^T (C_t - M_t J_FK Jd_IK) J_FK."""
    J = task.J_IK
    if J.shape[0] != J.shape[1]:
        raise ValidationError("actuator-space EOM need a square J_IK")
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= 1e-12 * max(1.0, s[0]):
        raise SingularityError(f"J_IK singular (smallest singular value {s[-1]:.3e})", cond=np.inf)
    JF = np.linalg.inv(J)
    Ma = JF.T @ task.M @ JF
    Ca = JF.T @ (task.C - task.M @ JF @ task.Jd_IK) @ JF
    Qg = JF.T @ task.Wgrav
    Q = JF.T @ task.W
    if W_EE is not None:
        Q = Q - JF.T @ (Pp.T @ np.asarray(W_EE, dtype=float))
    return ActuatorTerms(Ma, Ca, Qg, Q, JF)


# --- inverse dynamics -------------------------------------------------------

def _solve_JT(J_IK: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if J_IK.shape[0] != J_IK.shape[1]:
        raise ValidationError("redundant or deficient actuation is not supported")
    s = np.linalg.svd(J_IK, compute_uv=False)
    if s[-1] <= 1e-12 * max(1.0, s[0]):
        raise SingularityError(f"J_IK singular (smallest singular value {s[-1]:.3e})", cond=np.inf)
    return np.linalg.solve(J_IK.T, rhs)


@dataclass
class LimbTaskResult:
    """Output of one limb node: joint state, its J_IK rows and W-bar."""

    theta: np.ndarray
    ik: LimbIKResult
    J_rows: np.ndarray
    Wbar: np.ndarray
    iterations: int


def limb_node(lb: LimbModel, pkm: AssembledPKM, x, Vt, Vtd, guess, tol: float = IK_TOL,
              fixed_iter: int | None = None, others: OtherForces | None = None) -> LimbTaskResult:
    """Geometric, velocity and acceleration IK of one limb followed by
    Wbar = Fbar^T Hbar^T phi."""
    th, it, _, st = limb_geometric_ik(lb, pkm, x, guess, tol, fixed_iter=fixed_iter,
                                      return_state=True)
    r = limb_acceleration_ik(lb, th, Vt, Vtd, state=st)
    phi = eval_phi(lb, r.state.kin, r.thetadd, pkm.gravity, others)
    Hb, _ = bar_blocks(lb, r.state.H, None)
    Wbar = r.F[lb.qbar].T @ (Hb.T @ phi)
    rows, _ = actuator_rows(lb, r)
    return LimbTaskResult(th, r, rows, Wbar, it)


def platform_node(pkm: AssembledPKM, x, Vt, Vtd, W_EE=None) -> np.ndarray:
    """phi_p - P_p^T W_EE at the commanded platform state."""
    Cp = chart_pose(pkm, x)
    Mp = pkm.platform_inertia.matrix()
    Pp = pkm.Pp
    out = Pp.T @ platform_ne(Mp, Pp @ Vt, Pp @ Vtd, Cp, pkm.gravity)
    if W_EE is not None:
        out = out - Pp.T @ np.asarray(W_EE, dtype=float)
    return out


@dataclass
class InvDynResult:
    u: np.ndarray
    thetas: list
    J_IK: np.ndarray
    Wbar: list
    phi_p: np.ndarray
    iterations: list
    thetads: list = None
    thetadds: list = None

    def predict(self, dt: float) -> list:
        """Second-order Taylor prediction of the joint angles after ``dt``."""
        return [th + dt * d + 0.5 * dt * dt * dd
                for th, d, dd in zip(self.thetas, self.thetads, self.thetadds)]

    def actuated(self, pkm: AssembledPKM) -> np.ndarray:
        return np.concatenate([th[[j - 1 for j in lb.actuated]]
                               for th, lb in zip(self.thetas, pkm.limbs)])


def _reduce(pkm, nodes, phi_p) -> InvDynResult:
    """Fixed ascending-order reduction of the node outputs."""
    W = np.zeros(pkm.dof)
    for nd in nodes:
        W = W + nd.Wbar
    W = W + phi_p
    J = np.vstack([nd.J_rows for nd in nodes])
    u = _solve_JT(J, W)
    return InvDynResult(u, [nd.theta for nd in nodes], J, [nd.Wbar for nd in nodes], phi_p,
                        [nd.iterations for nd in nodes], [nd.ik.thetad for nd in nodes],
                        [nd.ik.thetadd for nd in nodes])


def inverse_dynamics(pkm: AssembledPKM, x, Vt, Vtd, W_EE=None, guesses=None, tol: float = IK_TOL,
                     fixed_iter: int | None = None, others: OtherForces | None = None) -> InvDynResult:
    """Actuator forces u = J_IK^{-T} (sum_l Wbar_l + phi_p - P_p^T W_EE)."""
    Vt = np.asarray(Vt, dtype=float)
    Vtd = np.asarray(Vtd, dtype=float)
    if guesses is None:
        guesses = pkm.reference_thetas()
    nodes = [limb_node(lb, pkm, x, Vt, Vtd, g, tol, fixed_iter, others)
             for lb, g in zip(pkm.limbs, guesses)]
    return _reduce(pkm, nodes, platform_node(pkm, x, Vt, Vtd, W_EE))


def default_threads(requested: int | None, L: int) -> int:
    env = os.environ.get("PKMDYN_THREADS")
    n = int(env) if env else (requested if requested else L + 1)
    return max(1, min(n, L + 1))


class ParallelEvaluator:
    """Worker pool running the L limb nodes and the platform node
    concurrently; results are reduced in ascending limb order."""

    def __init__(self, pkm: AssembledPKM, threads: int | None = None):
        self.pkm = pkm
        self.threads = default_threads(threads, pkm.L)
        self.pool = ThreadPoolExecutor(max_workers=self.threads)

    def __call__(self, x, Vt, Vtd, W_EE=None, guesses=None, tol: float = IK_TOL,
                 fixed_iter: int | None = None, others: OtherForces | None = None) -> InvDynResult:
        pkm = self.pkm
        Vt = np.asarray(Vt, dtype=float)
        Vtd = np.asarray(Vtd, dtype=float)
        if guesses is None:
            guesses = pkm.reference_thetas()
        futs = [self.pool.submit(limb_node, lb, pkm, x, Vt, Vtd, g, tol, fixed_iter, others)
                for lb, g in zip(pkm.limbs, guesses)]
        fp = self.pool.submit(platform_node, pkm, x, Vt, Vtd, W_EE)
        nodes = [f.result() for f in futs]
        return _reduce(pkm, nodes, fp.result())

    def close(self):
        self.pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parallel_inverse_dynamics(pkm: AssembledPKM, x, Vt, Vtd, W_EE=None, guesses=None,
                              threads: int | None = None, **kw) -> InvDynResult:
    with ParallelEvaluator(pkm, threads) as ev:
        return ev(x, Vt, Vtd, W_EE, guesses, **kw)


# --- forward dynamics -------------------------------------------------------

@dataclass
class FDState:
    thetas: list
    Vt: np.ndarray


def forward_dynamics_rhs(pkm: AssembledPKM, state: FDState, u, W_EE=None,
                         others: OtherForces | None = None):
    """(thetadot per limb, Vtdot) from the task-space EOM in joint-state form."""
    Vt = np.asarray(state.Vt, dtype=float)
    results = []
    J_rows, Jd_rows = [], []
    for lb, th in zip(pkm.limbs, state.thetas):
        r = limb_acceleration_ik(lb, th, Vt, np.zeros_like(Vt))
        results.append(r)
        a, b = actuator_rows(lb, r)
        J_rows.append(a)
        Jd_rows.append(b)

    class _IK:
        pass

    ik = _IK()
    ik.results = results
    ik.J_IK = np.vstack(J_rows)
    ik.Jd_IK = np.vstack(Jd_rows)
    x = chart_coords(pkm, results[0].state.platform_pose)
    te = taskspace_eom(pkm, x, Vt, ik=ik, others=others)
    rhs = te.J_IK.T @ np.asarray(u, dtype=float) - te.C @ Vt - te.Wgrav - te.W
    if W_EE is not None:
        rhs = rhs + pkm.Pp.T @ np.asarray(W_EE, dtype=float)
    cond = np.linalg.cond(te.M)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularityError(f"task-space mass matrix singular (cond = {cond:.3e})", cond=cond)
    Vtd = np.linalg.solve(te.M, rhs)
    dths = [r.thetad for r in results]
    return dths, Vtd, te


def platform_coords(pkm: AssembledPKM, thetas) -> np.ndarray:
    """Mean chart coordinates of the platform as reached by the limbs."""
    xs = [chart_coords(pkm, KinematicsCache(lb.tree, th).C[lb.platform - 1])
          for lb, th in zip(pkm.limbs, thetas)]
    return np.mean(xs, axis=0)


def reproject(pkm: AssembledPKM, thetas, tol: float = IK_TOL):
    """Close all loops and make the limbs agree on one platform pose.

    Returns (thetas, x, loop residual after projection).
    """
    closed, xs = [], []
    for lb, th in zip(pkm.limbs, thetas):
        kin = KinematicsCache(lb.tree, th)
        closed.append(th)
        xs.append(chart_coords(pkm, kin.C[lb.platform - 1]))
    x = np.mean(xs, axis=0)
    out = [limb_geometric_ik(lb, pkm, x, th, tol)[0] for lb, th in zip(pkm.limbs, closed)]
    return out, x, loop_residual(pkm, out)


def loop_residual(pkm: AssembledPKM, thetas) -> float:
    res = 0.0
    for lb, th in zip(pkm.limbs, thetas):
        if lb.loops.cycles:
            r = lb.loops.residual(KinematicsCache(lb.tree, th))
            res = max(res, float(np.max(np.abs(r))))
    return res


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    Vt: np.ndarray
    theta_act: np.ndarray
    u: np.ndarray
    loop_residual: np.ndarray
    power_residual: np.ndarray
    power: np.ndarray
    thetas: list


def simulate(pkm: AssembledPKM, x0, V0, u_of_t: Callable, t_end: float, dt: float,
             W_EE=None, guesses=None, others: OtherForces | None = None,
             residual_abort: float = 1e-4, monitor_power: bool = True,
             jump_abort: float = 1e-3) -> SimResult:
    """Fixed-step RK4 on (theta_(l), V_t) with geometric re-projection after
    every step. ``u_of_t(t, state)`` returns the actuator forces. A step whose
    re-projection moves any joint by more than ``jump_abort`` aborts."""
    if dt <= 0.0:
        raise ValidationError("dt must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    Vt = np.atleast_1d(np.asarray(V0, dtype=float)).copy()
    if guesses is None:
        guesses = pkm.reference_thetas()
    thetas = [limb_geometric_ik(lb, pkm, x0, g)[0] for lb, g in zip(pkm.limbs, guesses)]
    n_steps = int(round(t_end / dt))
    ts, xs, Vs, acts, us, lres, pres, pws = [], [], [], [], [], [], [], []

    def act_of(ths):
        return np.concatenate([th[[j - 1 for j in lb.actuated]] for th, lb in zip(ths, pkm.limbs)])

    def f(t, ths, V):
        s = FDState(ths, V)
        u = u_of_t(t, s)
        dths, Vd, te = forward_dynamics_rhs(pkm, s, u, W_EE, others)
        return dths, Vd, u, te

    def det_signs(te):
        return [np.sign(np.linalg.det(r.state.Lt)) for r in te.ik.results
                if r.state.Lt.shape[0] == r.state.Lt.shape[1]]

    t = 0.0
    x = platform_coords(pkm, thetas)
    res = loop_residual(pkm, thetas)
    signs = None
    for k in range(n_steps + 1):
        d1, a1, u1, te = f(t, thetas, Vt)
        new_signs = det_signs(te)
        if signs is not None and new_signs != signs:
            # the task-space chart cannot be continued through a singularity
            raise SingularityError(f"limb Jacobian changed sign at t = {t:.6g} "
                                   "(singular configuration crossed)", t=t)
        signs = new_signs
        ts.append(t)
        xs.append(x)
        Vs.append(Vt.copy())
        acts.append(act_of(thetas))
        us.append(np.asarray(u1, dtype=float))
        lres.append(res)
        if res > residual_abort:
            raise DivergenceError(f"loop residual {res:.3e} at t = {t:.6g}")
        if monitor_power:
            pw, rate = power_terms(pkm, thetas, Vt, a1, u1, W_EE, te.ik.results)
            pres.append(abs(pw - rate))
            pws.append(pw)
        if k == n_steps:
            break
        h = dt
        th2 = [th + 0.5 * h * d for th, d in zip(thetas, d1)]
        d2, a2, _, _ = f(t + 0.5 * h, th2, Vt + 0.5 * h * a1)
        th3 = [th + 0.5 * h * d for th, d in zip(thetas, d2)]
        d3, a3, _, _ = f(t + 0.5 * h, th3, Vt + 0.5 * h * a2)
        th4 = [th + h * d for th, d in zip(thetas, d3)]
        d4, a4, _, _ = f(t + h, th4, Vt + h * a3)
        thetas = [th + h / 6.0 * (p + 2.0 * q + 2.0 * r + s)
                  for th, p, q, r, s in zip(thetas, d1, d2, d3, d4)]
        Vt = Vt + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        integrated = thetas
        thetas, x, res = reproject(pkm, thetas)
        jump = max(float(np.max(np.abs(a - b))) for a, b in zip(thetas, integrated))
        t = (k + 1) * dt
        if jump > jump_abort:
            raise DivergenceError(f"re-projection moved the joints by {jump:.3e} rad at t = {t:.6g} "
                                  "(singularity or branch change)")
    return SimResult(np.array(ts), np.array(xs), np.array(Vs), np.array(acts), np.array(us),
                     np.array(lres), np.array(pres), np.array(pws), thetas)


# --- energy -----------------------------------------------------------------

def mechanical_energy(pkm: AssembledPKM, thetas, Vt):
    """(T, V_pot) of all moving bodies (platform-excluded limb trees plus
    the platform)."""
    Vt = np.asarray(Vt, dtype=float)
    g0 = pkm.gravity
    T = 0.0
    U = 0.0
    Cp = None
    for lb, th in zip(pkm.limbs, thetas):
        r = limb_acceleration_ik(lb, th, Vt, np.zeros_like(Vt))
        kin = r.state.kin
        Ms = _mass_matrices(lb)
        for j in lb.bar:
            V = kin.J[j - 1] @ r.thetad
            T += 0.5 * V @ Ms[j - 1] @ V
            I = lb.inertias[j - 1]
            C = kin.C[j - 1]
            U -= I.m * g0 @ C.act(I.d)
        if Cp is None:
            Cp = kin.C[lb.platform - 1]
    Mp = pkm.platform_inertia
    Vp = pkm.Pp @ Vt
    T += 0.5 * Vp @ Mp.matrix() @ Vp
    U -= Mp.m * g0 @ Cp.act(Mp.d)
    return T, U


def power_terms(pkm: AssembledPKM, thetas, Vt, Vtd, u, W_EE=None, results=None):
    """(input power, d/dt(T + V_pot) + dissipation).

    The energy rate is computed from body twists and accelerations obtained
    by acceleration IK, independently of the assembled EOM. ``results`` may
    pass velocity-level IK results (with rates) already available at this state.
    """
    Vt = np.asarray(Vt, dtype=float)
    Vtd = np.asarray(Vtd, dtype=float)
    g0 = pkm.gravity
    rate = 0.0
    p_in = 0.0
    Cp = None
    for i, (lb, th, u_l) in enumerate(zip(pkm.limbs, thetas, _split_u(pkm, u))):
        if results is None:
            r = limb_acceleration_ik(lb, th, Vt, Vtd)
        else:
            r0 = results[i]
            st = r0.state
            thdd = st.H @ (r0.F @ Vtd) + (st.Hd @ r0.F + st.H @ r0.Fd) @ Vt
            r = LimbIKResult(r0.F, r0.qd, r0.thetad, st, r0.Fd, None, thdd, r0.Ltinv)
        kin = r.state.kin
        Ms = _mass_matrices(lb)
        for j in lb.bar:
            J = kin.J[j - 1]
            V = J @ r.thetad
            Vd = J @ r.thetadd + kin.Jd[j - 1] @ r.thetad
            Mi = Ms[j - 1]
            rate += V @ (Mi @ Vd) + V @ gravity_wrench(Mi, kin.C[j - 1].R, g0)
        cols = [j - 1 for j in lb.bar]
        rate += float(np.sum(lb.friction[cols] * r.thetad[cols] ** 2))
        p_in += float(u_l @ r.thetad[[j - 1 for j in lb.actuated]])
        if Cp is None:
            Cp = kin.C[lb.platform - 1]
    Mp = pkm.platform_inertia.matrix()
    Vp = pkm.Pp @ Vt
    rate += Vp @ (Mp @ (pkm.Pp @ Vtd)) + Vp @ gravity_wrench(Mp, Cp.R, g0)
    if W_EE is not None:
        p_in += float(np.asarray(W_EE, dtype=float) @ Vp)
    return p_in, rate


def _split_u(pkm: AssembledPKM, u):
    u = np.asarray(u, dtype=float)
    out, i = [], 0
    for lb in pkm.limbs:
        k = len(lb.actuated)
        out.append(u[i:i + k])
        i += k
    return out
