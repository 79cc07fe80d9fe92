import numpy as np
import pytest

from pkmdyn.dynamics import tree_eom
from pkmdyn.errors import ValidationError
from pkmdyn.limb_kin import manipulator_ik
from pkmdyn.modular import Mount, delta_mounts, instance_gravity_vector, instantiate_all, instantiate_limb
from pkmdyn.se3 import Pose, adjoint, rot_x, rot_z
from pkmdyn.checks import reference_x, symmetry_error
from pkmdyn.tree_kin import KinematicsCache


def test_identity_mount_reproduces_representative(delta, rng):
    rep = delta.limbs[0]
    inst = instantiate_limb(rep, Pose.identity(), Pose.identity())
    assert np.array_equal(inst.tree.Y, rep.tree.Y)
    th = rng.normal(size=rep.n)
    a = KinematicsCache(rep.tree, th)
    b = KinematicsCache(inst.tree, th)
    for k in range(rep.n):
        assert np.array_equal(a.C[k].matrix(), b.C[k].matrix())
        assert np.array_equal(a.J[k], b.J[k])


def test_second_delta_limb_screw(delta):
    S = Pose(rot_z(2 * np.pi / 3), np.zeros(3))
    Y = adjoint(S) @ np.array([0.0, -1.0, 0.0, 0.0, 0.0, 0.15])
    assert np.allclose(delta.limbs[1].tree.Y[0], Y, atol=1e-15)
    S3 = Pose(rot_z(-2 * np.pi / 3), np.zeros(3))
    assert np.allclose(delta.limbs[2].tree.Y[0], adjoint(S3) @ delta.limbs[0].tree.Y[0], atol=1e-15)


def test_mounts_are_plus_minus_120_degrees():
    ms = delta_mounts()
    angles = [np.arctan2(m.S0.R[1, 0], m.S0.R[0, 0]) for m in ms]
    assert np.allclose(angles, [0.0, 2 * np.pi / 3, -2 * np.pi / 3])
    assert all(np.array_equal(m.S0.matrix(), m.Sp.matrix()) for m in ms)


def test_body_fixed_jacobians_unchanged(delta, rng):
    rep = delta.limbs[0]
    th = rng.normal(size=rep.n)
    a = KinematicsCache(rep.tree, th)
    for inst in delta.limbs[1:]:
        b = KinematicsCache(inst.tree, th)
        for k in range(rep.n):
            if k + 1 == rep.platform:
                continue
            assert np.allclose(a.J[k], b.J[k], atol=1e-14)


def test_platform_jacobian_transforms_with_mount(delta, rng):
    rep = delta.limbs[0]
    p = rep.platform - 1
    th = rng.normal(size=rep.n)
    a = KinematicsCache(rep.tree, th)
    for inst in delta.limbs[1:]:
        b = KinematicsCache(inst.tree, th)
        assert np.allclose(b.J[p], adjoint(inst.Sp) @ a.J[p], atol=1e-12)


@pytest.mark.parametrize("S, g_expected", [
    (np.eye(3), (0.0, 0.0, -9.81)),
    (rot_z(0.9), (0.0, 0.0, -9.81)),
    (rot_x(np.pi / 2), (0.0, -9.81, 0.0)),
])
def test_instance_gravity_vector(S, g_expected):
    g = instance_gravity_vector(Pose(S, np.ones(3)), [0.0, 0.0, -9.81])
    assert np.allclose(g, g_expected, atol=1e-15)


def test_gravity_equivalence(delta, rng):
    rep = delta.limbs[0]
    g0 = np.array([0.3, -1.2, -9.81])
    S0 = Pose(rot_x(0.4) @ rot_z(1.1), rng.normal(size=3))
    inst = instantiate_limb(rep, S0, Pose.identity())
    th = rng.normal(size=rep.n)
    Qi = tree_eom(inst, KinematicsCache(inst.tree, th), g0).Qgrav
    Qr = tree_eom(rep, KinematicsCache(rep.tree, th), instance_gravity_vector(S0, g0)).Qgrav
    assert np.allclose(Qi, Qr, atol=1e-12)


def test_delta_symmetry(delta):
    assert symmetry_error(delta) < 1e-10


def test_symmetry_of_limb_angles(delta):
    ik = manipulator_ik(delta, reference_x(delta), np.zeros(3))
    for th in ik.thetas:
        assert np.allclose(th, 0.0, atol=1e-12)


def test_no_mounts_rejected(delta):
    with pytest.raises(ValidationError):
        instantiate_all(delta.limbs[0], [])
    assert len(instantiate_all(delta.limbs[0], [Mount(Pose.identity(), Pose.identity())])) == 1
