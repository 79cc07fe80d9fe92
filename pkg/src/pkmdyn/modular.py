"""Stamping limb instances from a representative limb via mount frames."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .limb_kin import LimbModel
from .loops import CutJointSpec, CycleModel, LimbLoops
from .se3 import Pose, adjoint, rot_z
from .tree_kin import TreeModel


@dataclass
class Mount:
    """Base mount ``S0`` (construction frame -> inertial frame) and platform
    mount ``Sp`` (construction frame of the platform -> platform frame)."""

    S0: Pose
    Sp: Pose


def delta_mounts(L: int = 3) -> list:
    """Mounts rotated about the vertical axis by 0, +2pi/3, -2pi/3 (for L = 3)."""
    if L == 3:
        angles = [0.0, 2.0 * np.pi / 3.0, -2.0 * np.pi / 3.0]
    else:
        angles = [2.0 * np.pi * i / L for i in range(L)]
    out = []
    for a in angles:
        S = Pose(rot_z(a), np.zeros(3))
        out.append(Mount(S, S))
    return out


def _move_frame(S: Pose, body: int, platform: int, S0: Pose, Sp: Pose) -> Pose:
    """Body-relative frame after instancing (only ground and platform move)."""
    if body == 0:
        return S0 @ S
    if body == platform:
        return Sp @ S
    return S


def instantiate_limb(rep: LimbModel, S0: Pose, Sp: Pose, name: str = "") -> LimbModel:
    """Limb instance with Y(l) = Ad(S0) Y', A(l) = S0 A' and the platform
    reference A_p(l) = S0 A_p' Sp^{-1}. Body-fixed screws of all non-platform
    bodies are unchanged."""
    t = rep.tree
    AdS0 = adjoint(S0)
    Y = np.array([AdS0 @ y for y in t.Y])
    A = []
    for i in range(1, t.n + 1):
        Ai = S0 @ t.A[i - 1]
        if i == rep.platform:
            Ai = Ai @ Sp.inv()
        A.append(Ai)
    tree = TreeModel(list(t.pred), Y, A, list(t.kinds), list(t.names))
    cycles = []
    for c in rep.loops.cycles:
        cut = c.cut
        new_cut = CutJointSpec(cut.k, cut.r,
                               _move_frame(cut.Sk, cut.k, rep.platform, S0, Sp),
                               _move_frame(cut.Sr, cut.r, rep.platform, S0, Sp),
                               cut.kind, cut.dist_rows, cut.ori_pairs,
                               None if cut.Y is None else AdS0 @ cut.Y)
        cycles.append(CycleModel(c.index, new_cut, list(c.k_branch), list(c.r_branch),
                                 list(c.independent)))
    loops = LimbLoops(tree, cycles, rep.loops.formulation)
    inertias = list(rep.inertias)
    lb = LimbModel(tree, loops, rep.platform, inertias, list(rep.actuated), list(rep.rows),
                   Sp, S0, rep.friction.copy(), list(rep.joint_ids), name or rep.name)
    for attr in ("Pp", "Dt"):
        if hasattr(rep, attr):
            setattr(lb, attr, copy.copy(getattr(rep, attr)))
    return lb


def instance_gravity_vector(S0: Pose, g0) -> np.ndarray:
    """Gravity expressed in the construction frame of a limb instance."""
    return S0.R.T @ np.asarray(g0, dtype=float)


def instantiate_all(rep: LimbModel, mounts) -> list:
    if not mounts:
        raise ValidationError("no mounts given")
    return [instantiate_limb(rep, m.S0, m.Sp, f"limb{i + 1}") for i, m in enumerate(mounts)]
