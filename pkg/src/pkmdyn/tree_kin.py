"""Kinematics of a tree-topology system in product-of-exponentials form.

Bodies and tree-joints share canonical indices ``1..n`` (joint ``i`` moves
body ``i``); ``pred[i] < i`` is the predecessor body, 0 is the ground.
Arrays indexed by body use 0-based position ``i - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .se3 import Pose, ad_small, adjoint, adjoint_inv, exp_screw, skew


@dataclass
class TreeModel:
    pred: list                 # length n + 1, pred[0] unused
    Y: np.ndarray              # (n, 6) spatial screws at the reference configuration
    A: list                    # n reference poses of the body frames
    kinds: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, 6)
        n = self.Y.shape[0]
        if len(self.pred) != n + 1 or len(self.A) != n:
            raise ValidationError("tree arrays have inconsistent sizes")
        if any(not (0 <= self.pred[i] < i) for i in range(1, n + 1)):
            raise ValidationError("tree numbering is not canonical")
        if not self.kinds:
            self.kinds = ["revolute"] * n
        self.X = np.array([adjoint_inv(self.A[i]) @ self.Y[i] for i in range(n)])
        # reference pose of each body relative to its predecessor
        self.B = []
        for i in range(1, n + 1):
            p = self.pred[i]
            Ap = Pose.identity() if p == 0 else self.A[p - 1]
            self.B.append(Ap.inv() @ self.A[i - 1])
        self.ancestors = [set() for _ in range(n + 1)]
        for i in range(1, n + 1):
            self.ancestors[i] = {i} | self.ancestors[self.pred[i]]
        self.adX = np.array([ad_small(x) for x in self.X])
        self._exp_data = [_exp_data(x) for x in self.X]

    def joint_motion(self, i: int, theta: float):
        """(R, t) of exp(theta X_i); closed-form Rodrigues for unit or zero
        rotation axes, general exponential otherwise."""
        d = self._exp_data[i - 1]
        if d is None:
            E = exp_screw(self.X[i - 1], theta)
            return E.R, E.r
        kind, K, K2, wxv, wwv, v = d
        if kind == 0:
            return _EYE3, v * theta
        st, ct = np.sin(theta), np.cos(theta)
        R = _EYE3 + st * K + (1.0 - ct) * K2
        return R, (_EYE3 - R) @ wxv + wwv * theta

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def on_path(self, k: int, i: int) -> bool:
        """True if joint ``i`` lies on the path from body ``k`` to ground."""
        return i in self.ancestors[k]

    def path(self, k: int) -> list:
        """Joints from ground to body ``k`` in tree order."""
        return sorted(self.ancestors[k])


_EYE3 = np.eye(3)


def _exp_data(x):
    w, v = x[:3], x[3:]
    nw = np.linalg.norm(w)
    if nw == 0.0:
        return (0, None, None, None, None, v.copy())
    if abs(nw - 1.0) > 1e-12:
        return None
    K = skew(w)
    return (1, K, K @ K, np.cross(w, v), w * (w @ v), v.copy())


def body_pose(tree: TreeModel, theta, k: int) -> Pose:
    """C_k = exp(th_1 Y_1) ... exp(th_k Y_k) A_k over the ground path of ``k``."""
    if not 1 <= k <= tree.n:
        raise ValidationError(f"unknown body {k}")
    C = Pose.identity()
    for i in tree.path(k):
        C = C @ exp_screw(tree.Y[i - 1], theta[i - 1])
    return C @ tree.A[k - 1]


class KinematicsCache:
    """Poses, body-fixed Jacobians and (optionally) their rates at one state.

    ``J[k-1]`` is the 6 x n body Jacobian of body ``k``; ``Jd`` its time
    derivative; ``V`` and ``Vd`` the body twists and twist rates.
    """

    def __init__(self, tree: TreeModel, theta, dtheta=None, ddtheta=None):
        n = tree.n
        self.tree = tree
        self.theta = np.asarray(theta, dtype=float).copy()
        self.dtheta = None if dtheta is None else np.asarray(dtheta, dtype=float).copy()
        self.ddtheta = None if ddtheta is None else np.asarray(ddtheta, dtype=float).copy()
        self.C = [None] * n
        self.AdDinv = [None] * n      # Ad of (C_pred^{-1} C_i)^{-1}
        J = np.zeros((n, 6, n))
        for i in range(1, n + 1):
            Re, te = tree.joint_motion(i, self.theta[i - 1])
            Bi = tree.B[i - 1]
            D = Pose(Bi.R @ Re, Bi.R @ te + Bi.r)
            p = tree.pred[i]
            self.C[i - 1] = D if p == 0 else self.C[p - 1] @ D
            Adi = adjoint_inv(D)
            self.AdDinv[i - 1] = Adi
            if p:
                J[i - 1] = Adi @ J[p - 1]
            J[i - 1][:, i - 1] = tree.X[i - 1]
        self.J = J
        self.V = self.Jd = self.Vd = None
        if self.dtheta is not None:
            self.set_rates(self.dtheta, self.ddtheta)

    def set_rates(self, dtheta, ddtheta=None):
        """Attach joint rates (and accelerations) and compute Jd, V, Vd."""
        tree = self.tree
        n = tree.n
        J = self.J
        dth = self.dtheta = np.asarray(dtheta, dtype=float).copy()
        self.ddtheta = None if ddtheta is None else np.asarray(ddtheta, dtype=float).copy()
        Jd = np.zeros_like(J)
        for i in range(1, n + 1):
            p = tree.pred[i]
            if p:
                Jd[i - 1] = self.AdDinv[i - 1] @ Jd[p - 1]
            Jd[i - 1] -= dth[i - 1] * (tree.adX[i - 1] @ J[i - 1])
        self.Jd = Jd
        self.V = J @ dth
        self.Vd = None
        if self.ddtheta is not None:
            self.Vd = J @ self.ddtheta + Jd @ dth

    def pose(self, k: int) -> Pose:
        return Pose.identity() if k == 0 else self.C[k - 1]

    def jacobian(self, k: int) -> np.ndarray:
        return np.zeros((6, self.tree.n)) if k == 0 else self.J[k - 1]

    def jacobian_dot(self, k: int) -> np.ndarray:
        return np.zeros((6, self.tree.n)) if k == 0 else self.Jd[k - 1]

    def twist(self, k: int) -> np.ndarray:
        return np.zeros(6) if k == 0 else self.V[k - 1]

    def spatial_twist(self, k: int) -> np.ndarray:
        return np.zeros(6) if k == 0 else adjoint(self.C[k - 1]) @ self.V[k - 1]

    def relative_pose(self, k: int, i: int) -> Pose:
        """C_{k,i} = C_k^{-1} C_i."""
        return self.pose(k).inv() @ self.pose(i)


def body_jacobian(tree: TreeModel, theta, k: int) -> np.ndarray:
    """Body-fixed Jacobian, column i = Ad(C_k^{-1} C_i) X_i for i on the path."""
    C = [body_pose(tree, theta, i) for i in range(1, tree.n + 1)]
    Jk = np.zeros((6, tree.n))
    Ck_inv = C[k - 1].inv()
    for i in tree.path(k):
        Jk[:, i - 1] = adjoint(Ck_inv @ C[i - 1]) @ tree.X[i - 1]
    return Jk


def system_jacobian(tree: TreeModel, theta, cache: KinematicsCache | None = None):
    """Factors of J = A X: lower block-triangular A (6n x 6n) and block
    diagonal X (6n x n)."""
    if cache is None:
        cache = KinematicsCache(tree, theta)
    n = tree.n
    A = np.zeros((6 * n, 6 * n))
    for i in range(1, n + 1):
        Ci_inv = cache.C[i - 1].inv()
        for j in tree.path(i):
            A[6 * (i - 1):6 * i, 6 * (j - 1):6 * j] = adjoint(Ci_inv @ cache.C[j - 1])
    Xs = np.zeros((6 * n, n))
    for i in range(n):
        Xs[6 * i:6 * i + 6, i] = tree.X[i]
    return A, Xs, A @ Xs


def system_a(tree: TreeModel, dtheta) -> np.ndarray:
    """a = diag(dtheta_i ad_{X_i})."""
    n = tree.n
    a = np.zeros((6 * n, 6 * n))
    for i in range(n):
        a[6 * i:6 * i + 6, 6 * i:6 * i + 6] = dtheta[i] * tree.adX[i]
    return a


def system_jacobian_dot(tree: TreeModel, theta, dtheta) -> np.ndarray:
    """dJ/dt = -A a(dtheta) J, stacked over all bodies (6n x n)."""
    A, _, J = system_jacobian(tree, theta)
    return -A @ system_a(tree, dtheta) @ J


def jacobian_dot(tree: TreeModel, theta, dtheta, k: int) -> np.ndarray:
    """Column form: dJ_{k,j}/dt = sum_{j < i <= k} ad_{J_{k,j}} J_{k,i} dtheta_i."""
    Jk = body_jacobian(tree, theta, k)
    out = np.zeros_like(Jk)
    path = tree.path(k)
    for j in path:
        acc = np.zeros(6)
        for i in path:
            if i > j and tree.on_path(i, j):
                acc += Jk[:, i - 1] * dtheta[i - 1]
        out[:, j - 1] = ad_small(Jk[:, j - 1]) @ acc
    return out


def body_twist_and_acc(tree: TreeModel, theta, dtheta, ddtheta, k: int):
    cache = KinematicsCache(tree, theta, dtheta, ddtheta)
    return cache.V[k - 1].copy(), cache.Vd[k - 1].copy()
