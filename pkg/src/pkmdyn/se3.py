"""Rigid-body primitives on SE(3).

Conventions used throughout the package:

* twists are ``(omega, v)``, angular part first
* wrenches are ``(tau, f)``, torque part first, so that ``W @ V`` is power
* a pose ``C = (R, r)`` maps body coordinates to the parent frame,
  ``p_parent = R p_body + r``
* body-fixed twists satisfy ``dR/dt = R skew(omega)`` and ``dr/dt = R v``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularityError, ValidationError

SMALL_ANGLE = 1e-7
ORTHO_TOL = 1e-12


def skew(a) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (cheaper than np.cross for single vectors)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def unskew(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


@dataclass(frozen=True)
class Pose:
    """Rigid-body pose stored as a rotation matrix and a position vector."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.r
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.r + self.r)

    def inv(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.r)

    def act(self, p) -> np.ndarray:
        return self.R @ np.asarray(p, dtype=float) + self.r

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        return (np.abs(self.R.T @ self.R - np.eye(3)).max() <= tol
                and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def validate(self, tol: float = ORTHO_TOL) -> "Pose":
        if not self.is_valid(tol):
            raise ValidationError("pose rotation is not a proper orthonormal matrix")
        return self


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


REVOLUTE = "revolute"
PRISMATIC = "prismatic"
HELICAL = "helical"


@dataclass(frozen=True)
class ScrewAxis:
    """Screw coordinates of a 1-DOF joint.

    ``frame`` is ``"spatial"`` for coordinates in the reference (construction)
    frame and ``"body"`` for coordinates in the frame of the moving body.
    """

    vec: np.ndarray
    kind: str = REVOLUTE
    pitch: float = 0.0
    frame: str = "spatial"

    def __post_init__(self):
        object.__setattr__(self, "vec", np.asarray(self.vec, dtype=float).reshape(6))

    def validate(self, tol: float = 1e-9) -> "ScrewAxis":
        w, v = self.vec[:3], self.vec[3:]
        if self.kind == PRISMATIC:
            if np.linalg.norm(w) > tol or abs(np.linalg.norm(v) - 1.0) > tol:
                raise ValidationError("prismatic screw must be (0, e) with unit e")
        elif self.kind in (REVOLUTE, HELICAL):
            if abs(np.linalg.norm(w) - 1.0) > tol:
                raise ValidationError("revolute/helical screw needs a unit angular part")
        else:
            raise ValidationError(f"unknown joint kind {self.kind!r}")
        return self


def screw_from_geometry(e, y=(0.0, 0.0, 0.0), h: float = 0.0,
                        kind: str = REVOLUTE, tol: float = 1e-9) -> ScrewAxis:
    """Screw coordinates from an axis direction ``e``, a point ``y`` on the
    axis and a pitch ``h``."""
    e = np.asarray(e, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind == PRISMATIC:
        n = np.linalg.norm(e)
        if n == 0.0:
            raise ValidationError("prismatic joint needs a nonzero direction")
        return ScrewAxis(np.r_[np.zeros(3), e / n], PRISMATIC, np.inf)
    if abs(np.linalg.norm(e) - 1.0) > tol:
        raise ValidationError(f"joint axis {e} is not a unit vector")
    if kind == REVOLUTE and h != 0.0:
        kind = HELICAL
    return ScrewAxis(np.r_[e, np.cross(y, e) + h * e], kind, float(h))


def _vec(X) -> np.ndarray:
    return X.vec if isinstance(X, ScrewAxis) else np.asarray(X, dtype=float)


def exp_so3(w, theta: float = 1.0) -> np.ndarray:
    """Rotation matrix exp(theta * skew(w)) for an arbitrary vector ``w``."""
    w = np.asarray(w, dtype=float) * theta
    a = np.sqrt(w @ w)
    W = skew(w)
    if a < SMALL_ANGLE:
        a2 = a * a
        s = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        c = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    else:
        s = np.sin(a) / a
        c = (1.0 - np.cos(a)) / (a * a)
    return np.eye(3) + s * W + c * (W @ W)


def dexp_so3(w) -> np.ndarray:
    """Left-trivialized differential of exp on so(3): ``dexp(w) = sum ad^k/(k+1)!``.

    With ``R = exp(w)`` the spatial angular velocity is ``dexp(w) @ dw`` and the
    body-fixed one is ``dexp(-w) @ dw``.
    """
    w = np.asarray(w, dtype=float)
    a = np.sqrt(w @ w)
    W = skew(w)
    if a < SMALL_ANGLE:
        a2 = a * a
        b = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        c = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    else:
        b = (1.0 - np.cos(a)) / (a * a)
        c = (a - np.sin(a)) / (a ** 3)
    return np.eye(3) + b * W + c * (W @ W)


def log_so3(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos_a = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    a = np.arccos(cos_a)
    if a < SMALL_ANGLE:
        return 0.5 * unskew(R - R.T)
    if np.pi - a < 1e-6:
        # near pi: recover the axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        axis /= np.linalg.norm(axis)
        if axis @ unskew(R - R.T) < 0.0:
            axis = -axis
        return a * axis
    return a / (2.0 * np.sin(a)) * unskew(R - R.T)


def log_se3(C: Pose) -> np.ndarray:
    """Twist X with exp(X) = C (rotation angle below pi)."""
    w = log_so3(C.R)
    return np.r_[w, np.linalg.solve(dexp_so3(w), C.r)]


def exp_screw(X, theta: float) -> Pose:
    """exp(theta * X) for a screw (or any twist) ``X``, in closed form."""
    x = _vec(X)
    w = x[:3] * theta
    v = x[3:] * theta
    a = np.sqrt(w @ w)
    if a == 0.0:
        return Pose(np.eye(3), v.copy())
    W = skew(w)
    W2 = W @ W
    if a < SMALL_ANGLE:
        a2 = a * a
        s = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        c = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        d = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    else:
        sa, ca = np.sin(a), np.cos(a)
        s = sa / a
        c = (1.0 - ca) / (a * a)
        d = (a - sa) / (a ** 3)
    R = np.eye(3) + s * W + c * W2
    V = np.eye(3) + c * W + d * W2
    return Pose(R, V @ v)


def adjoint(C: Pose) -> np.ndarray:
    """Ad_C = [[R, 0], [skew(r) R, R]]."""
    R = C.R
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = skew(C.r) @ R
    return out


def adjoint_inv(C: Pose) -> np.ndarray:
    """Ad_C^{-1} = Ad_{C^{-1}} without forming the inverse pose first."""
    Rt = C.R.T
    out = np.zeros((6, 6))
    out[:3, :3] = Rt
    out[3:, 3:] = Rt
    out[3:, :3] = -Rt @ skew(C.r)
    return out


def ad_small(X) -> np.ndarray:
    """ad_X = [[skew(xi), 0], [skew(eta), skew(xi)]] for X = (xi, eta)."""
    x = _vec(X)
    out = np.zeros((6, 6))
    W = skew(x[:3])
    out[:3, :3] = W
    out[3:, 3:] = W
    out[3:, :3] = skew(x[3:])
    return out


def gyroscopic_matrix(V) -> np.ndarray:
    """G(V) = -ad_V^T = [[skew(w), skew(v)], [0, skew(w)]]."""
    x = _vec(V)
    out = np.zeros((6, 6))
    W = skew(x[:3])
    out[:3, :3] = W
    out[3:, 3:] = W
    out[:3, 3:] = skew(x[3:])
    return out


def spatial_to_body(Y, A: Pose) -> ScrewAxis:
    """X = Ad_A^{-1} Y for a joint whose body has reference pose ``A``."""
    if isinstance(Y, ScrewAxis):
        return ScrewAxis(adjoint_inv(A) @ Y.vec, Y.kind, Y.pitch, "body")
    return ScrewAxis(adjoint_inv(A) @ np.asarray(Y, dtype=float), frame="body")


def body_to_spatial(X, A: Pose) -> ScrewAxis:
    if isinstance(X, ScrewAxis):
        return ScrewAxis(adjoint(A) @ X.vec, X.kind, X.pitch, "spatial")
    return ScrewAxis(adjoint(A) @ np.asarray(X, dtype=float))


@dataclass(frozen=True)
class SpatialInertia:
    """Mass ``m``, COM offset ``d`` and inertia tensor ``Theta`` about the
    body-frame origin, all in body coordinates."""

    m: float = 0.0
    d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    Theta: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).reshape(3))
        object.__setattr__(self, "Theta", np.asarray(self.Theta, dtype=float).reshape(3, 3))
        if self.m < 0.0:
            raise ValidationError("negative mass")

    @classmethod
    def from_com(cls, m: float, d, Theta_c) -> "SpatialInertia":
        """Build from the inertia tensor about the COM (parallel-axis shift)."""
        d = np.asarray(d, dtype=float)
        D = skew(d)
        return cls(m, d, np.asarray(Theta_c, dtype=float) - m * D @ D)

    def matrix(self) -> np.ndarray:
        M = np.zeros((6, 6))
        M[:3, :3] = self.Theta
        mD = self.m * skew(self.d)
        M[:3, 3:] = mD
        M[3:, :3] = -mD
        M[3:, 3:] = self.m * np.eye(3)
        return M

    def transformed(self, C: Pose) -> "SpatialInertia":
        """Inertia of the same body expressed in a frame ``F'`` where ``C`` is
        the pose of the old body frame relative to ``F'``."""
        R = C.R
        d_new = R @ self.d + C.r
        Theta_c = self.Theta + self.m * skew(self.d) @ skew(self.d)
        return SpatialInertia.from_com(self.m, d_new, R @ Theta_c @ R.T)


TRANSLATION = "translation"
ROTATION_Z = "rotation_z"
TRANSLATION_ROTATION = "translation_rotation"

P_TRANS = np.vstack([np.zeros((3, 3)), np.eye(3)])
P_ROT_Z = np.array([[0.0], [0.0], [1.0], [0.0], [0.0], [0.0]])


def taskspace_velocity_map(x, chart: str = TRANSLATION) -> np.ndarray:
    """Map ``H_p`` with body-fixed platform twist ``V_p = H_p(x) dx/dt``.

    Charts:
      ``translation``          x = r (3), platform orientation fixed at identity
      ``rotation_z``           x = rotation angle about the fixed z-axis (1)
      ``translation_rotation`` x = (r, phi) with R = exp(skew(phi)) (6)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if chart == TRANSLATION:
        return P_TRANS.copy()
    if chart == ROTATION_Z:
        return P_ROT_Z.copy()
    if chart == TRANSLATION_ROTATION:
        phi = x[3:6]
        a = np.linalg.norm(phi)
        if abs(a - 2.0 * np.pi) < 1e-6 or a > 2.0 * np.pi:
            raise SingularityError(f"rotation chart singular at |phi| = {a}")
        R = exp_so3(phi)
        Hp = np.zeros((6, 6))
        Hp[:3, 3:] = dexp_so3(-phi)
        Hp[3:, :3] = R.T
        return Hp
    raise ValidationError(f"unknown taskspace chart {chart!r}")
