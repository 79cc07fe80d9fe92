"""Loop-closure constraints of fundamental cycles and their solution.

Two formulations are provided: cut-joint constraints built from distance and
orientation conditions between two frames attached to the bodies joined by
the cut-joint, and the cut-body form in which the closure is written as a
product of exponentials around the cycle. Both feed the same block-partitioned
velocity solution ``H = [-G_y^{-1} G_q; I]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DivergenceError, SingularityError, ValidationError
from .se3 import Pose, ad_small, cross3, adjoint, adjoint_inv, exp_screw, log_se3, skew

RANK_TOL = 1e-9
COND_MAX = 1e8

CUT_ROWS = {
    "spherical": ((0, 1, 2), ()),
    "universal": ((0, 1, 2), ((0, 1),)),
    "revolute": ((0, 1, 2), ((0, 2), (1, 2))),
}


@dataclass
class CutJointSpec:
    """Cut-joint between bodies ``k`` and ``r`` (canonical indices, 0 = ground).

    ``Sk`` and ``Sr`` are the joint frames relative to the body frames.
    ``dist_rows`` selects components of the distance vector and ``ori_pairs``
    selects elements (i, j) of the relative rotation between the joint frames.
    """

    k: int
    r: int
    Sk: Pose
    Sr: Pose
    kind: str = "revolute"
    dist_rows: tuple = None
    ori_pairs: tuple = None
    Y: np.ndarray | None = None   # spatial reference screw (1-DOF cut-joints)

    def __post_init__(self):
        if self.kind in CUT_ROWS:
            d, o = CUT_ROWS[self.kind]
            if self.dist_rows is None:
                self.dist_rows = d
            if self.ori_pairs is None:
                self.ori_pairs = o
        elif self.kind == "custom":
            self.dist_rows = tuple(self.dist_rows or ())
            self.ori_pairs = tuple(tuple(p) for p in (self.ori_pairs or ()))
        else:
            raise ValidationError(f"unknown cut-joint kind {self.kind!r}")
        if not self.dist_rows and not self.ori_pairs:
            raise ValidationError("cut-joint has an empty constraint row set")
        self.Sk.validate(1e-9)
        self.Sr.validate(1e-9)
        # constant row data in the body frames
        self._E = self.Sk.R[:, list(self.dist_rows)].T
        self._ak = self.Sk.R[:, [i for i, _ in self.ori_pairs]]
        self._br = self.Sr.R[:, [j for _, j in self.ori_pairs]]

    @property
    def m(self) -> int:
        return len(self.dist_rows) + len(self.ori_pairs)


def cut_frames_from_world(Ak: Pose, Ar: Pose, point, axis, axis2=None):
    """Joint frames on bodies k and r for a cut-joint located at ``point``.

    The frame z-axis is ``axis`` (revolute); for a universal joint the x-axis
    of the k-frame is ``axis`` and the y-axis of the r-frame is ``axis2``.
    """
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    if axis2 is None:
        t = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = t - (t @ e) * e
        x /= np.linalg.norm(x)
        R = np.column_stack([x, cross3(e, x), e])
    else:
        f = np.asarray(axis2, dtype=float)
        f = f - (f @ e) * e
        f /= np.linalg.norm(f)
        R = np.column_stack([e, f, cross3(e, f)])
    W = Pose(R, point)
    return Ak.inv() @ W, Ar.inv() @ W


def _cross_cols(a, b) -> np.ndarray:
    """Row-wise cross products of the columns of two 3 x p arrays (p x 3)."""
    return np.column_stack([a[1] * b[2] - a[2] * b[1],
                            a[2] * b[0] - a[0] * b[2],
                            a[0] * b[1] - a[1] * b[0]])


def cut_joint_rows(spec: CutJointSpec, kin, with_rate: bool = False):
    """Residual, constraint Jacobian G (m x n) and optionally dG/dt.

    ``kin`` is a :class:`~pkmdyn.tree_kin.KinematicsCache`; rates are needed
    for ``with_rate``. Distance rows are the selected components of the
    offset between the joint-frame origins in the k-side joint frame;
    orientation rows are elements (i, j) of the relative rotation.
    """
    Ck, Cr = kin.pose(spec.k), kin.pose(spec.r)
    Jk, Jr = kin.jacobian(spec.k), kin.jacobian(spec.r)
    Rk, Rr = Ck.R, Cr.R
    Rkr = Rk.T @ Rr
    dk, dr = spec.Sk.r, spec.Sr.r
    s = Rk.T @ (Cr.r + Rr @ dr - Ck.r)
    E, ak, br = spec._E, spec._ak, spec._br
    nd = E.shape[0]
    m = spec.m
    Bk = np.zeros((m, 6))
    Br = np.zeros((m, 6))
    res = np.empty(m)
    Dr = skew(dr)
    if nd:
        ERkr = E @ Rkr
        res[:nd] = E @ (s - dk)
        Bk[:nd, :3] = E @ skew(s)
        Bk[:nd, 3:] = -E
        Br[:nd, :3] = -ERkr @ Dr
        Br[:nd, 3:] = ERkr
    if m > nd:
        bk = Rkr @ br
        ar = Rkr.T @ ak
        res[nd:] = np.sum(ak * bk, axis=0)
        Bk[nd:, :3] = _cross_cols(ak, bk)
        Br[nd:, :3] = _cross_cols(br, ar)
    G = Bk @ Jk + Br @ Jr
    if not with_rate:
        return res, G
    Vk, Vr = kin.twist(spec.k), kin.twist(spec.r)
    wk, vk, wr, vr = Vk[:3], Vk[3:], Vr[:3], Vr[3:]
    Rkr_dot = Rkr @ skew(wr) - skew(wk) @ Rkr
    s_dot = cross3(s, wk) - vk + Rkr @ (vr - Dr @ wr)
    dBk = np.zeros((m, 6))
    dBr = np.zeros((m, 6))
    if nd:
        ERd = E @ Rkr_dot
        dBk[:nd, :3] = E @ skew(s_dot)
        dBr[:nd, :3] = -ERd @ Dr
        dBr[:nd, 3:] = ERd
    if m > nd:
        dBk[nd:, :3] = _cross_cols(ak, Rkr_dot @ br)
        dBr[nd:, :3] = _cross_cols(br, Rkr_dot.T @ ak)
    Gd = dBk @ Jk + Bk @ kin.jacobian_dot(spec.k) + dBr @ Jr + Br @ kin.jacobian_dot(spec.r)
    return res, G, Gd


def cut_joint_angle(spec: CutJointSpec, kin) -> float:
    """Relative rotation of the r-frame about the joint-frame z-axis."""
    D = (kin.pose(spec.k) @ spec.Sk).inv() @ (kin.pose(spec.r) @ spec.Sr)
    return float(np.arctan2(D.R[1, 0], D.R[0, 0]))


@dataclass
class CycleModel:
    """Data of one fundamental cycle in canonical tree numbering.

    ``k_branch`` and ``r_branch`` hold tree-joint indices from the common
    ancestor towards body k and body r; ``vars`` is their union in ascending
    order (the cycle's tree-joint variables).
    """

    index: int
    cut: CutJointSpec
    k_branch: list
    r_branch: list
    independent: list = field(default_factory=list)

    @property
    def vars(self) -> list:
        return sorted(self.k_branch + self.r_branch)

    @property
    def sigma(self) -> dict:
        s = {i: 1 for i in self.k_branch}
        s.update({i: -1 for i in self.r_branch})
        return s


def cut_body_constraint(cycle: CycleModel, tree, kin, eta_cut: float = 0.0, with_rate=False):
    """Closure residual g and the cut-body constraint Jacobian.

    g = prod exp(sigma_i eta_i Y_i), traversed from the r-branch (reversed,
    negated) through the k-branch to the cut-joint; g = I at closure.
    G columns are sigma_i S_i (instantaneous spatial screws) in the order of
    ``cycle.vars`` followed by the cut-joint column. Returns (g, G) or
    (g, G, dG/dt).
    """
    if cycle.cut.Y is None:
        raise ValidationError("cut-body form requires a 1-DOF cut-joint screw")
    th = kin.theta
    g = Pose.identity()
    for i in reversed(cycle.r_branch):
        g = g @ exp_screw(tree.Y[i - 1], -th[i - 1])
    for i in cycle.k_branch:
        g = g @ exp_screw(tree.Y[i - 1], th[i - 1])
    g = g @ exp_screw(cycle.cut.Y, eta_cut)
    sig = cycle.sigma
    cols = cycle.vars
    k = cycle.cut.k
    Ak = Pose.identity() if k == 0 else tree.A[k - 1]
    Xc = adjoint_inv(Ak) @ cycle.cut.Y
    G = np.zeros((6, len(cols) + 1))
    S = []
    for c, i in enumerate(cols):
        Si = adjoint(kin.C[i - 1]) @ tree.X[i - 1]
        S.append(Si)
        G[:, c] = sig[i] * Si
    Sc = adjoint(kin.pose(k)) @ Xc
    G[:, -1] = Sc
    if not with_rate:
        return g, G
    Gd = np.zeros_like(G)
    for c, i in enumerate(cols):
        Gd[:, c] = sig[i] * (ad_small(kin.spatial_twist(i)) @ S[c])
    Gd[:, -1] = ad_small(kin.spatial_twist(k)) @ Sc
    return g, G, Gd


@dataclass
class LoopSolution:
    """H (in partition order: dependent rows first, then independent) and
    its rate, plus bookkeeping."""

    H: np.ndarray
    Hd: np.ndarray | None
    y: list
    q: list
    cond: float
    rank: int

    def full(self, n_vars: int, Hmat=None) -> np.ndarray:
        """Rows re-ordered to the natural variable order ``0..n_vars-1``."""
        Hm = self.H if Hmat is None else Hmat
        out = np.zeros((n_vars, Hm.shape[1]))
        for row, idx in enumerate(list(self.y) + list(self.q)):
            out[idx] = Hm[row]
        return out


def reduce_rows(G: np.ndarray, tol: float = RANK_TOL):
    """Row basis of G via SVD: returns U_r (m x r) with range(U_r^T G) = rowspace(G)."""
    if G.shape[0] == 0:
        return np.zeros((0, 0)), 0
    U, s, _ = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0], 0
    r = int(np.sum(s > tol * s[0]))
    return U[:, :r], r


def auto_partition(G: np.ndarray, tol: float = RANK_TOL) -> list:
    """Independent variable indices from column-pivoted QR of the reduced G."""
    U, r = reduce_rows(G, tol)
    Gr = U.T @ G
    n = G.shape[1]
    if r == 0:
        return list(range(n))
    _, _, piv = sla.qr(Gr, pivoting=True)
    y = sorted(piv[:r].tolist())
    return [i for i in range(n) if i not in y]


def solve_velocity_constraints(G: np.ndarray, q=None, tol: float = RANK_TOL,
                               cond_max: float = COND_MAX) -> LoopSolution:
    """H = [-G_y^{-1} G_q; I] for the partition with independent indices ``q``
    (``None`` selects them automatically). Redundant rows are removed first."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = G.shape[1]
    if G.shape[0] == 0:
        return LoopSolution(np.eye(n), None, [], list(range(n)), 1.0, 0)
    U, r = reduce_rows(G, tol)
    if q is None:
        q = auto_partition(G, tol)
    q = list(q)
    y = [i for i in range(n) if i not in q]
    if len(y) != r:
        raise SingularityError(
            f"partition has {len(y)} dependent coordinates but the constraints have rank {r}")
    Gr = U.T @ G
    Gy, Gq = Gr[:, y], Gr[:, q]
    if r == 0:
        return LoopSolution(np.eye(n), None, y, q, 1.0, 0)
    Gyinv, cond = inverse_with_cond(Gy)
    if cond > cond_max:
        raise SingularityError(f"dependent block G_y is ill-conditioned (cond = {cond:.3e})",
                               cond=cond)
    H = np.vstack([-Gyinv @ Gq, np.eye(len(q))])
    sol = LoopSolution(H, None, y, q, float(cond), r)
    sol._U = U
    sol._Gyinv = Gyinv
    return sol


def inverse_with_cond(A: np.ndarray):
    """(A^{-1}, 1-norm condition number); cond is inf for a singular A."""
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return None, np.inf
    cond = float(np.abs(A).sum(axis=0).max() * np.abs(Ainv).sum(axis=0).max())
    if not np.isfinite(cond):
        return None, np.inf
    return Ainv, cond


def loop_solution_dot(G: np.ndarray, Gd: np.ndarray, sol: LoopSolution) -> np.ndarray:
    """Hdot top block G_y^{-1}(Gd_y G_y^{-1} G_q - Gd_q), bottom block zero."""
    if sol.rank == 0:
        return np.zeros_like(sol.H)
    U = getattr(sol, "_U", None)
    if U is None:
        U, _ = reduce_rows(G)
    Gr = U.T @ G
    Gdr = U.T @ Gd
    Gdy, Gdq = Gdr[:, sol.y], Gdr[:, sol.q]
    Gyinv = getattr(sol, "_Gyinv", None)
    if Gyinv is None:
        Gyinv = np.linalg.inv(Gr[:, sol.y])
    # Hdot_y = -Gy^{-1} Gd H
    top = -Gyinv @ (Gdq - Gdy @ (Gyinv @ Gr[:, sol.q]))
    Hd = np.zeros_like(sol.H)
    Hd[:len(sol.y)] = top
    return Hd


def assemble_limb_H(n: int, cycle_solutions, cycle_vars, free, with_rate=True):
    """Limb-level H (n x delta) with rows in canonical joint order.

    ``cycle_solutions[c]`` is a LoopSolution over ``cycle_vars[c]`` (tree-joint
    indices, 1-based) and ``free`` lists tree-joints not in any cycle.
    Columns follow q = (q of cycle 1, ..., q of cycle gamma, free joints).
    Returns (H, Hd, q_joints, P) where P permutes the block-diagonal
    arrangement into canonical row order.
    """
    used = set()
    for vs in cycle_vars:
        if used & set(vs):
            raise ValidationError("fundamental cycles share joints: limb is not hybrid")
        used |= set(vs)
    blocks, dblocks, rows, q_joints = [], [], [], []
    for sol, vs in zip(cycle_solutions, cycle_vars):
        blocks.append(sol.H)
        dblocks.append(sol.Hd if sol.Hd is not None else np.zeros_like(sol.H))
        rows += [vs[i] for i in sol.y] + [vs[i] for i in sol.q]
        q_joints += [vs[i] for i in sol.q]
    k = len(free)
    if k:
        blocks.append(np.eye(k))
        dblocks.append(np.zeros((k, k)))
        rows += list(free)
        q_joints += list(free)
    ncols = sum(b.shape[1] for b in blocks)
    H = np.zeros((n, ncols))
    Hd = np.zeros((n, ncols)) if with_rate else None
    P = np.zeros((n, n))
    r0 = c0 = 0
    for b, db in zip(blocks, dblocks):
        nr, nc = b.shape
        idx = [j - 1 for j in rows[r0:r0 + nr]]
        H[idx, c0:c0 + nc] = b
        if with_rate:
            Hd[idx, c0:c0 + nc] = db
        r0 += nr
        c0 += nc
    for pos, joint in enumerate(rows):
        P[joint - 1, pos] = 1.0
    return H, Hd, q_joints, P


class LimbLoops:
    """All fundamental cycles of one limb with a fixed coordinate partition.

    ``cycles`` are :class:`CycleModel` objects whose ``independent`` lists
    (tree-joint indices) pin the partition; empty lists are filled
    automatically at the reference configuration.
    """

    def __init__(self, tree, cycles, formulation: str = "cut_joint"):
        if formulation not in ("cut_joint", "cut_body"):
            raise ValidationError(f"unknown loop formulation {formulation!r}")
        self.tree = tree
        self.cycles = list(cycles)
        self.formulation = formulation
        in_cycle = set()
        for c in self.cycles:
            if in_cycle & set(c.vars):
                raise ValidationError("fundamental cycles share joints: limb is not hybrid")
            in_cycle |= set(c.vars)
        self.free = [i for i in range(1, tree.n + 1) if i not in in_cycle]
        if any(not c.independent for c in self.cycles):
            from .tree_kin import KinematicsCache
            kin = KinematicsCache(tree, np.zeros(tree.n))
            for c in self.cycles:
                if not c.independent:
                    _, G = cut_joint_rows(c.cut, kin)
                    vs = c.vars
                    qi = auto_partition(G[:, [v - 1 for v in vs]])
                    c.independent = [vs[i] for i in qi]
        self.q_joints = []
        for c in self.cycles:
            self.q_joints += list(c.independent)
        self.q_joints += self.free
        self.dependent = [v for c in self.cycles for v in c.vars if v not in c.independent]

    @property
    def delta(self) -> int:
        return len(self.q_joints)

    def _cycle_G(self, c, kin, with_rate):
        """Constraint Jacobian over the cycle variables (cut-joint form) or
        over cycle variables plus the cut-joint variable (cut-body form)."""
        cols = [v - 1 for v in c.vars]
        if self.formulation == "cut_joint":
            out = cut_joint_rows(c.cut, kin, with_rate)
            if with_rate:
                return out[1][:, cols], out[2][:, cols]
            return out[1][:, cols], None
        out = cut_body_constraint(c, self.tree, kin, 0.0, with_rate)
        return out[1], (out[2] if with_rate else None)

    def solve(self, kin, with_rate: bool = True):
        """Limb H and Hdot at the state held by ``kin``.

        Returns (H, Hd, conds) with H of shape n x delta in canonical rows.
        """
        sols, cvars, conds = [], [], []
        rate = with_rate and kin.dtheta is not None
        cached = getattr(kin, "_loop_sols", None)
        fresh = []
        for ci, c in enumerate(self.cycles):
            vs = c.vars
            G, Gd = self._cycle_G(c, kin, rate)
            if cached is not None and rate:
                # position-level solution already known for this configuration
                sol = LoopSolution(cached[ci].H, None, cached[ci].y, cached[ci].q,
                                   cached[ci].cond, cached[ci].rank)
                sol._U = getattr(cached[ci], "_U", None)
                sol._Gyinv = getattr(cached[ci], "_Gyinv", None)
            else:
                q_loc = [vs.index(j) for j in c.independent]
                sol = solve_velocity_constraints(G, q_loc)
            fresh.append(sol)
            if Gd is not None:
                sol.Hd = loop_solution_dot(G, Gd, sol)
            if self.formulation == "cut_body":
                # drop the cut-joint row: only tree-joint rates enter the limb H
                ncut = len(vs)
                keep = [r for r, idx in enumerate(sol.y) if idx != ncut]
                y = [sol.y[r] for r in keep]
                H = np.vstack([sol.H[keep], sol.H[len(sol.y):]])
                Hd = None if sol.Hd is None else np.vstack([sol.Hd[keep], sol.Hd[len(sol.y):]])
                sol = LoopSolution(H, Hd, y, sol.q, sol.cond, sol.rank)
            sols.append(sol)
            cvars.append(vs)
            conds.append(sol.cond)
        if cached is None:
            kin._loop_sols = fresh
        H, Hd, q_joints, _ = assemble_limb_H(self.tree.n, sols, cvars, self.free, rate)
        assert q_joints == self.q_joints
        return H, Hd, conds

    def cycle_solution(self, c, kin, with_rate=True):
        """LoopSolution of one cycle in its own formulation (partition order)."""
        vs = c.vars
        G, Gd = self._cycle_G(c, kin, with_rate and kin.dtheta is not None)
        q_loc = [vs.index(j) for j in c.independent]
        sol = solve_velocity_constraints(G, q_loc)
        if Gd is not None:
            sol.Hd = loop_solution_dot(G, Gd, sol)
        return sol

    def residual(self, kin) -> np.ndarray:
        """Stacked cut-joint residuals of all cycles."""
        if not self.cycles:
            return np.zeros(0)
        return np.concatenate([cut_joint_rows(c.cut, kin)[0] for c in self.cycles])

    def constraint_jacobian(self, kin) -> np.ndarray:
        """Stacked cut-joint constraint Jacobians (rows x n)."""
        if not self.cycles:
            return np.zeros((0, self.tree.n))
        return np.vstack([cut_joint_rows(c.cut, kin)[1] for c in self.cycles])

    def close(self, theta, tol: float = 1e-12, max_iter: int = 50):
        """Newton projection of the dependent joints onto the loop constraints
        with all independent joints held fixed. Returns (theta, iterations)."""
        from .tree_kin import KinematicsCache
        th = np.asarray(theta, dtype=float).copy()
        if not self.cycles:
            return th, 0
        dep = [j - 1 for j in self.dependent]
        for it in range(max_iter + 1):
            kin = KinematicsCache(self.tree, th)
            if self.formulation == "cut_body":
                res, Gy = self._cut_body_newton_system(kin, dep)
            else:
                res = self.residual(kin)
                Gy = self.constraint_jacobian(kin)[:, dep]
            if np.max(np.abs(res)) <= tol:
                return th, it
            if it == max_iter:
                break
            step = np.linalg.lstsq(Gy, -res, rcond=None)[0]
            th[dep] += step[:len(dep)]
        raise DivergenceError(f"loop closure did not converge (residual {np.max(np.abs(res)):.3e})")

    def _cut_body_newton_system(self, kin, dep):
        """Residual -Ad(Q)^{-1} log(g) handled as a linear system in the
        dependent tree-joints (the cut-joint angle is eliminated by
        measuring it from the geometry)."""
        res_all, G_all = [], []
        for c in self.cycles:
            eta = cut_joint_angle(c.cut, kin)
            g, G = cut_body_constraint(c, self.tree, kin, eta)
            # twist of g is expressed relative to the r-branch base; map to world
            Q = Pose.identity()
            anc = sorted(set(c.k_branch + c.r_branch))
            base = kin.pose(self.tree.pred[min(anc)]) if anc else Pose.identity()
            A0 = Pose.identity() if self.tree.pred[min(anc)] == 0 else \
                self.tree.A[self.tree.pred[min(anc)] - 1]
            P = base @ A0.inv()
            for i in c.r_branch:
                Q = Q @ exp_screw(self.tree.Y[i - 1], kin.theta[i - 1])
            xi = adjoint(P @ Q) @ log_se3(g)
            rows = np.zeros((6, self.tree.n + 1))
            for col, i in enumerate(c.vars):
                rows[:, i - 1] = G[:, col]
            rows[:, -1] = G[:, -1]
            res_all.append(xi)
            G_all.append(rows)
        G = np.vstack(G_all)
        cols = dep + [self.tree.n]
        return np.concatenate(res_all), G[:, cols]
