"""Limb kinematics after constraint embedding and manipulator-level IK."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, SingularityError, ValidationError
from .loops import LimbLoops, cut_joint_rows, inverse_with_cond
from .se3 import (P_ROT_Z, P_TRANS, ROTATION_Z, TRANSLATION, TRANSLATION_ROTATION, Pose,
                  SpatialInertia, adjoint, adjoint_inv, exp_so3, log_se3, log_so3, rot_z)
from .tree_kin import KinematicsCache, TreeModel

IK_TOL = 1e-10
COND_MAX = 1e8


@dataclass
class LimbModel:
    """One limb instance in canonical tree numbering.

    ``platform`` is the canonical index of the platform body in this limb's
    tree; ``rows`` selects rows of the platform twist (expressed in the
    representative limb's terminal frame, i.e. after removing the platform
    mount ``Sp``) that form the taskspace Jacobian.
    """

    tree: TreeModel
    loops: LimbLoops
    platform: int
    inertias: list
    actuated: list
    rows: list
    Sp: Pose = field(default_factory=Pose.identity)
    S0: Pose = field(default_factory=Pose.identity)
    friction: np.ndarray | None = None
    joint_ids: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        n = self.tree.n
        if self.friction is None:
            self.friction = np.zeros(n)
        self.friction = np.asarray(self.friction, dtype=float)
        # joints whose bodies belong to the platform's subtree only move the platform
        self.bar = [j for j in range(1, n + 1) if self.platform not in self.tree.ancestors[j]]
        cyc_of = {}
        for c in self.loops.cycles:
            for v in c.vars:
                cyc_of[v] = c
        qbar = []
        barset = set(self.bar)
        for idx, j in enumerate(self.loops.q_joints):
            c = cyc_of.get(j)
            if j in barset or (c is not None and barset & set(c.vars)):
                qbar.append(idx)
        self.qbar = qbar
        self.AdSp_inv = adjoint_inv(self.Sp)

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def delta(self) -> int:
        return self.loops.delta


@dataclass
class AssembledPKM:
    limbs: list
    platform_inertia: SpatialInertia
    Pp: np.ndarray
    chart: str = TRANSLATION
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    platform_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = ""

    def __post_init__(self):
        self.Pp = np.asarray(self.Pp, dtype=float).reshape(6, -1)
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.platform_origin = np.asarray(self.platform_origin, dtype=float)
        for lb in self.limbs:
            lb.Pp = self.Pp
            lb.Dt = (lb.AdSp_inv @ self.Pp)[lb.rows]

    @property
    def L(self) -> int:
        return len(self.limbs)

    @property
    def dof(self) -> int:
        return self.Pp.shape[1]

    @property
    def n_act(self) -> int:
        return sum(len(lb.actuated) for lb in self.limbs)

    def reference_thetas(self) -> list:
        return [np.zeros(lb.n) for lb in self.limbs]


# --- taskspace charts -------------------------------------------------------

def chart_coords(pkm: AssembledPKM, Cp: Pose) -> np.ndarray:
    if pkm.chart == TRANSLATION:
        return Cp.r.copy()
    if pkm.chart == ROTATION_Z:
        return np.array([np.arctan2(Cp.R[1, 0], Cp.R[0, 0])])
    if pkm.chart == TRANSLATION_ROTATION:
        return np.r_[Cp.r, log_so3(Cp.R)]
    raise ValidationError(f"unknown chart {pkm.chart!r}")


def chart_pose(pkm: AssembledPKM, x) -> Pose:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if pkm.chart == TRANSLATION:
        return Pose(np.eye(3), x)
    if pkm.chart == ROTATION_Z:
        return Pose(rot_z(x[0]), pkm.platform_origin)
    if pkm.chart == TRANSLATION_ROTATION:
        return Pose(exp_so3(x[3:6]), x[:3])
    raise ValidationError(f"unknown chart {pkm.chart!r}")


# --- limb-level kinematics --------------------------------------------------

class LimbState:
    """Kinematic quantities of one limb at (theta, dtheta).

    Holds the tree cache, H and Hdot, the platform Jacobian and, after
    velocity IK, F, Fdot and related terms.
    """

    def __init__(self, limb: LimbModel, theta, dtheta=None, ddtheta=None):
        self.limb = limb
        self.kin = KinematicsCache(limb.tree, theta)
        self.H, self.Hd, self.conds = limb.loops.solve(self.kin, False)
        p = limb.platform
        self.Jp = self.kin.J[p - 1]
        self.Lp = self.Jp @ self.H
        self.Lp6 = limb.AdSp_inv @ self.Lp
        self.Lt = self.Lp6[limb.rows]
        self.Ldp6 = self.Ldt = None
        if dtheta is not None:
            self.set_rates(dtheta, ddtheta)

    def set_rates(self, dtheta, ddtheta=None):
        """Attach joint rates; computes Jdot, Hdot and the rate of L_t."""
        limb = self.limb
        self.kin.set_rates(dtheta, ddtheta)
        self.H, self.Hd, self.conds = limb.loops.solve(self.kin, True)
        p = limb.platform
        Ldp = self.kin.Jd[p - 1] @ self.H + self.Jp @ self.Hd
        self.Ldp6 = limb.AdSp_inv @ Ldp
        self.Ldt = self.Ldp6[limb.rows]

    @property
    def theta(self):
        return self.kin.theta

    @property
    def platform_pose(self) -> Pose:
        return self.kin.C[self.limb.platform - 1]


def compound_jacobian(limb: LimbModel, theta, k: int) -> np.ndarray:
    """L_k = J_k H."""
    st = LimbState(limb, theta)
    return st.kin.J[k - 1] @ st.H


def taskspace_jacobian(limb: LimbModel, theta, Pp=None):
    """(L_t, D_t) for the limb at ``theta``."""
    st = LimbState(limb, theta)
    Dt = limb.Dt if Pp is None else (limb.AdSp_inv @ Pp)[limb.rows]
    return st.Lt, Dt


def _solve_F(limb: LimbModel, st: LimbState, mode: str):
    Lt, Dt = st.Lt, limb.Dt
    if mode == "square":
        if Lt.shape[0] != Lt.shape[1]:
            raise ValidationError("square IK needs as many selected rows as limb DOF")
        Ltinv, cond = inverse_with_cond(Lt)
        if cond > COND_MAX:
            raise SingularityError(f"taskspace Jacobian singular (cond = {cond:.3e})", cond=cond)
        return Ltinv @ Dt, Ltinv
    if mode == "pinv":
        # left pseudoinverse of the full platform Jacobian, V_p = P_p V_t
        L6 = st.Lp6
        LtL = L6.T @ L6
        cond = np.linalg.cond(LtL)
        if not np.isfinite(cond) or cond > COND_MAX ** 2:
            raise SingularityError(f"platform Jacobian rank deficient (cond = {cond:.3e})",
                                   cond=cond)
        Lpinv = np.linalg.solve(LtL, L6.T)
        return Lpinv @ (limb.AdSp_inv @ limb.Pp), Lpinv
    raise ValidationError(f"unknown IK mode {mode!r}")


@dataclass
class LimbIKResult:
    F: np.ndarray
    qd: np.ndarray
    thetad: np.ndarray
    state: LimbState
    Fd: np.ndarray | None = None
    qdd: np.ndarray | None = None
    thetadd: np.ndarray | None = None
    Ltinv: np.ndarray | None = None


def limb_velocity_ik(limb: LimbModel, theta, Vt, mode: str = "square",
                     state: LimbState | None = None) -> LimbIKResult:
    """F = L_t^{-1} D_t, qdot = F V_t and thetadot = H F V_t. ``state`` is a
    rate-free LimbState at ``theta`` to reuse."""
    st0 = LimbState(limb, theta) if state is None else state
    F, Ltinv = _solve_F(limb, st0, mode)
    Vt = np.asarray(Vt, dtype=float)
    qd = F @ Vt
    thd = st0.H @ qd
    return LimbIKResult(F, qd, thd, st0, Ltinv=Ltinv)


def limb_acceleration_ik(limb: LimbModel, theta, Vt, Vtd, mode: str = "square",
                         state: LimbState | None = None) -> LimbIKResult:
    """Velocity and acceleration IK including Fdot.

    thetadd = H F Vtd + (Hd - H Lt^{-1} Ldt) F Vt, qdd = F Vtd + Fd Vt with
    Fd = -Lt^{-1} Ldt F.
    """
    Vt = np.asarray(Vt, dtype=float)
    Vtd = np.asarray(Vtd, dtype=float)
    r0 = limb_velocity_ik(limb, theta, Vt, mode, state)
    st = r0.state
    st.set_rates(r0.thetad)
    F, Ltinv = r0.F, r0.Ltinv
    Ld = st.Ldt if mode == "square" else st.Ldp6
    Fd = -Ltinv @ Ld @ F
    qdd = F @ Vtd + Fd @ Vt
    thdd = st.H @ qdd + st.Hd @ r0.qd
    return LimbIKResult(F, r0.qd, r0.thetad, st, Fd, qdd, thdd, Ltinv)


def limb_geometric_fk(limb: LimbModel, q, guess, tol: float = 1e-12, max_iter: int = 50):
    """Joint angles for prescribed independent coordinates ``q``: the
    dependent joints are found by Newton iteration on the loop constraints."""
    th = np.asarray(guess, dtype=float).copy()
    qj = [j - 1 for j in limb.loops.q_joints]
    th[qj] = q
    return limb.loops.close(th, tol, max_iter)


def _pose_error(limb: LimbModel, Cp: Pose, Cdes: Pose) -> np.ndarray:
    """Selected rows of the body-fixed twist that moves Cp to Cdes, in the
    representative limb's terminal frame."""
    err = log_se3(Cp.inv() @ Cdes)
    return (limb.AdSp_inv @ err)[limb.rows]


def _loop_correction(limb: LimbModel, st: LimbState):
    """(Newton correction of the dependent joints for the loop residual,
    largest residual). Uses the partition and reduced rows of ``st``."""
    n = limb.n
    dc = np.zeros(n)
    loops = limb.loops
    if not loops.cycles:
        return dc, 0.0
    sols = st.kin._loop_sols
    worst = 0.0
    for c, sol in zip(loops.cycles, sols):
        res = cut_joint_rows(c.cut, st.kin)[0]
        worst = max(worst, float(np.max(np.abs(res))))
        if sol.rank == 0 or loops.formulation != "cut_joint":
            continue
        dy = -sol._Gyinv @ (sol._U.T @ res)
        vs = c.vars
        for k, idx in enumerate(sol.y):
            dc[vs[idx] - 1] += dy[k]
    return dc, worst


def limb_geometric_ik(limb: LimbModel, pkm: AssembledPKM, x, guess, tol: float = IK_TOL,
                      max_iter: int = 50, mode: str = "square", fixed_iter: int | None = None,
                      return_state: bool = False):
    """Newton iteration for the joint angles placing the platform at ``x``.

    Each iteration solves the loop constraints and the selected platform
    pose rows simultaneously: the dependent joints absorb the loop
    residual and the independent ones (through H L_t^{-1}) the remaining
    pose error. Returns (theta, iterations, error) where the error is the
    larger of the pose and loop residuals. With ``fixed_iter`` exactly that
    many steps are taken and the error is the one before the last step.
    ``return_state`` appends the LimbState at the returned angles (None
    when it was not evaluated).
    """
    Cdes = chart_pose(pkm, x)
    th = np.asarray(guess, dtype=float).copy()
    it = 0
    res = np.nan
    limit = max_iter if fixed_iter is None else fixed_iter
    sel = limb.AdSp_inv[limb.rows]

    def done(st):
        return (th, it, res, st) if return_state else (th, it, res)

    while True:
        if fixed_iter is not None and it >= limit:
            return done(None)
        st = LimbState(limb, th)
        e = _pose_error(limb, st.platform_pose, Cdes)
        dc, lres = _loop_correction(limb, st)
        res = max(float(np.max(np.abs(e))) if e.size else 0.0, lres)
        if fixed_iter is None and res <= tol:
            return done(st)
        if it >= limit:
            raise DivergenceError(f"limb IK did not converge (error {res:.3e})")
        _, Ltinv = _solve_F(limb, st, "square")
        e_c = e - sel @ (st.Jp @ dc)
        th = th + dc + st.H @ (Ltinv @ e_c)
        if limb.loops.formulation != "cut_joint" and limb.loops.cycles:
            th, _ = limb.loops.close(th)
        it += 1


def limb_platform_pose(limb: LimbModel, theta) -> Pose:
    return KinematicsCache(limb.tree, theta).C[limb.platform - 1]


@dataclass
class ManipulatorIK:
    thetas: list
    results: list
    theta_act: np.ndarray
    dtheta_act: np.ndarray
    J_IK: np.ndarray
    iterations: list
    ddtheta_act: np.ndarray | None = None
    Jd_IK: np.ndarray | None = None


def actuator_rows(limb: LimbModel, r: LimbIKResult):
    """Rows of H F (and its rate) for the actuated joints of one limb."""
    HF = r.state.H @ r.F
    rows = [j - 1 for j in limb.actuated]
    out = HF[rows]
    if r.Fd is not None:
        HFd = r.state.Hd @ r.F + r.state.H @ r.Fd
        return out, HFd[rows]
    return out, None


def manipulator_ik(pkm: AssembledPKM, x, Vt, Vtd=None, guesses=None, tol: float = IK_TOL,
                   mode: str = "square", fixed_iter: int | None = None) -> ManipulatorIK:
    """Geometric, velocity and (if Vtd is given) acceleration IK of all limbs;
    J_IK stacks the actuated rows of H_(l) F_(l)."""
    if guesses is None:
        guesses = pkm.reference_thetas()
    thetas, results, iters = [], [], []
    J_rows, Jd_rows = [], []
    for lb, g in zip(pkm.limbs, guesses):
        th, it, _, st = limb_geometric_ik(lb, pkm, x, g, tol, mode=mode, fixed_iter=fixed_iter,
                                          return_state=True)
        if Vtd is None:
            r = limb_velocity_ik(lb, th, Vt, mode, st)
        else:
            r = limb_acceleration_ik(lb, th, Vt, Vtd, mode, st)
        rows, drows = actuator_rows(lb, r)
        J_rows.append(rows)
        Jd_rows.append(drows)
        thetas.append(th)
        results.append(r)
        iters.append(it)
    J_IK = np.vstack(J_rows)
    Vt = np.asarray(Vt, dtype=float)
    act = np.concatenate([th[[j - 1 for j in lb.actuated]] for th, lb in zip(thetas, pkm.limbs)])
    out = ManipulatorIK(thetas, results, act, J_IK @ Vt, J_IK, iters)
    if Vtd is not None:
        out.Jd_IK = np.vstack(Jd_rows)
        out.ddtheta_act = J_IK @ np.asarray(Vtd, dtype=float) + out.Jd_IK @ Vt
    return out


def forward_jacobian(J_IK: np.ndarray) -> np.ndarray:
    """J_FK = J_IK^{-1} for a non-redundant PKM."""
    if J_IK.shape[0] != J_IK.shape[1]:
        raise ValidationError("J_IK is not square")
    s = np.linalg.svd(J_IK, compute_uv=False)
    if s[-1] <= 1e-12 * max(1.0, s[0]):
        raise SingularityError(f"PKM singular: smallest singular value {s[-1]:.3e}", cond=np.inf)
    return np.linalg.inv(J_IK)


def deselected_residual(limb: LimbModel, st: LimbState, F: np.ndarray, Pp: np.ndarray) -> float:
    """Largest violation of the platform-twist rows not used in L_t, on the
    motion thetadot = H F V_t (checked column-wise for unit V_t)."""
    others = [i for i in range(6) if i not in limb.rows]
    if not others:
        return 0.0
    lhs = (limb.AdSp_inv @ st.Lp)[others] @ F
    rhs = (limb.AdSp_inv @ Pp)[others]
    return float(np.max(np.abs(lhs - rhs)))
