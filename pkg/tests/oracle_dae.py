"""Maximal-coordinate inverse dynamics used as an independent reference.

Every moving body carries its own twist; every joint (tree and cut) is a
relative-twist constraint written in the frame of its child body; the
Newton-Euler equations of all bodies are solved together for the joint
reaction multipliers and the actuator forces. No constraint embedding,
loop-solution matrix or task-space projection is involved. Only body poses
(obtained from the joint angles) are shared with the library, and these are
first checked against all joint constraints at position level.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import null_space

from pkmdyn.se3 import ad_small, adjoint, gyroscopic_matrix
from pkmdyn.tree_kin import KinematicsCache


class _Body:
    def __init__(self, pose, M):
        self.pose = pose
        self.M = M


class _Joint:
    """Joint between body ``a`` (None = ground) and body ``b`` with unit screw
    ``X`` in b's frame; ``act`` is the actuator index or None."""

    def __init__(self, a, b, X, act=None):
        self.a, self.b, self.X, self.act = a, b, X, act
        self.P = null_space(X[None, :]).T     # 5 x 6, annihilates X


def _system(pkm, thetas):
    """Bodies and joints of the whole PKM in maximal coordinates."""
    bodies = []
    joints = []
    platform_pose = None
    act = 0
    limb_maps = []
    for lb, th in zip(pkm.limbs, thetas):
        kin = KinematicsCache(lb.tree, th)
        if platform_pose is None:
            platform_pose = kin.C[lb.platform - 1]
        bmap = {}
        for j in range(1, lb.n + 1):
            if j == lb.platform:
                bmap[j] = "p"
            elif lb.platform in lb.tree.ancestors[j]:
                raise ValueError("bodies beyond the platform are not supported by the oracle")
            else:
                bmap[j] = len(bodies)
                bodies.append(_Body(kin.C[j - 1], lb.inertias[j - 1].matrix()))
        limb_maps.append((lb, kin, bmap))
    P_ID = len(bodies)
    bodies.append(_Body(platform_pose, pkm.platform_inertia.matrix()))

    def idx(bmap, j):
        if j == 0:
            return None
        return P_ID if bmap[j] == "p" else bmap[j]

    for lb, kin, bmap in limb_maps:
        for j in range(1, lb.n + 1):
            a = idx(bmap, lb.tree.pred[j])
            b = idx(bmap, j)
            X = lb.tree.X[j - 1]
            if b == P_ID:
                # screw in the shared platform frame
                X = adjoint(platform_pose.inv() @ kin.C[j - 1]) @ X
            a_act = None
            if j in lb.actuated:
                a_act = act
                act += 1
            joints.append(_Joint(a, b, X, a_act))
        for c in lb.loops.cycles:
            cut = c.cut
            a = idx(bmap, cut.k)
            b = idx(bmap, cut.r)
            Cr = kin.pose(cut.r)
            if b == P_ID:
                Sr = platform_pose.inv() @ Cr @ cut.Sr
            else:
                Sr = cut.Sr
            e = Sr.R[:, 2]
            X = np.r_[e, np.cross(Sr.r, e)]
            joints.append(_Joint(a, b, X, None))
            _check_cut_position(kin, cut)
    return bodies, joints, P_ID, act


def _check_cut_position(kin, cut, tol=1e-8):
    Fk = kin.pose(cut.k) @ cut.Sk
    Fr = kin.pose(cut.r) @ cut.Sr
    if np.max(np.abs(Fk.r - Fr.r)) > tol or abs(Fk.R[:, 2] @ Fr.R[:, 2] - 1.0) > tol:
        raise ValueError("joint angles violate a cut-joint at position level")


def _constraint_matrix(bodies, joints):
    N = len(bodies)
    rows = []
    for jt in joints:
        A = np.zeros((5, 6 * N))
        b = jt.b
        A[:, 6 * b:6 * b + 6] = jt.P
        if jt.a is not None:
            D = bodies[b].pose.inv() @ bodies[jt.a].pose
            A[:, 6 * jt.a:6 * jt.a + 6] = -jt.P @ adjoint(D)
        rows.append(A)
    return np.vstack(rows)


def _accel_bias(bodies, joints, V):
    """Velocity-dependent part of the acceleration constraints."""
    out = []
    for jt in joints:
        if jt.a is None:
            out.append(np.zeros(5))
            continue
        b = jt.b
        D = bodies[b].pose.inv() @ bodies[jt.a].pose
        Vb = V[6 * b:6 * b + 6]
        Va = V[6 * jt.a:6 * jt.a + 6]
        out.append(jt.P @ (ad_small(Vb) @ adjoint(D) @ Va))
    return np.concatenate(out)


def _lstsq_exact(A, b, what, tol=1e-9):
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    res = np.max(np.abs(A @ x - b)) if b.size else 0.0
    if res > tol * max(1.0, np.max(np.abs(b))):
        raise ValueError(f"{what}: inconsistent system (residual {res:.3e})")
    return x


def oracle_inverse_dynamics(pkm, thetas, Vt, Vtd, W_EE=None, return_all=False):
    """Actuator forces from the maximal-coordinate equations at the
    configuration given by ``thetas`` and the task-space motion (Vt, Vtd)."""
    bodies, joints, P_ID, n_act = _system(pkm, thetas)
    N = len(bodies)
    Vt = np.atleast_1d(np.asarray(Vt, dtype=float))
    Vtd = np.atleast_1d(np.asarray(Vtd, dtype=float))
    A = _constraint_matrix(bodies, joints)
    Pp = pkm.Pp
    S = np.zeros((Pp.shape[1], 6 * N))
    S[:, 6 * P_ID:6 * P_ID + 6] = Pp.T
    K = np.vstack([A, S])
    # Pp has orthonormal columns, so Pp^T V_p recovers the task velocity
    V = _lstsq_exact(K, np.r_[np.zeros(A.shape[0]), Vt], "velocity")
    if np.linalg.matrix_rank(K) < 6 * N:
        raise ValueError("velocity constraints do not determine the body twists")
    Vd = _lstsq_exact(K, np.r_[-_accel_bias(bodies, joints, V), Vtd], "acceleration")
    # Newton-Euler: M Vd + G M V - M (0, R^T g) = A^T lambda + B u + W_EE
    g0 = pkm.gravity
    rhs = np.zeros(6 * N)
    for i, bd in enumerate(bodies):
        Vi = V[6 * i:6 * i + 6]
        Vdi = Vd[6 * i:6 * i + 6]
        rhs[6 * i:6 * i + 6] = bd.M @ Vdi + gyroscopic_matrix(Vi) @ (bd.M @ Vi) \
            - bd.M @ np.r_[0.0, 0.0, 0.0, bd.pose.R.T @ g0]
    if W_EE is not None:
        rhs[6 * P_ID:6 * P_ID + 6] -= np.asarray(W_EE, dtype=float)
    B = np.zeros((6 * N, n_act))
    for jt in joints:
        if jt.act is None:
            continue
        # pure couple about the joint axis on b, reaction on a
        W = np.r_[jt.X[:3], 0.0, 0.0, 0.0]
        B[6 * jt.b:6 * jt.b + 6, jt.act] += W
        if jt.a is not None:
            D = bodies[jt.b].pose.inv() @ bodies[jt.a].pose
            B[6 * jt.a:6 * jt.a + 6, jt.act] -= adjoint(D).T @ W
    Z = np.hstack([A.T, B])
    sol = _lstsq_exact(Z, rhs, "dynamics")
    u = sol[A.shape[0]:]
    if return_all:
        return u, V, Vd, bodies
    return u
