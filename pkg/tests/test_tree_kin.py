import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkmdyn.errors import ValidationError
from pkmdyn.se3 import Pose, adjoint, exp_screw, log_se3, rot_z, screw_from_geometry
from pkmdyn.tree_kin import (KinematicsCache, TreeModel, body_jacobian, body_pose,
                             body_twist_and_acc, jacobian_dot, system_jacobian,
                             system_jacobian_dot)

seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="module")
def tree(delta):
    return delta.limbs[0].tree


def random_tree(rng, n=5):
    """Random canonical tree with unit revolute and prismatic joints."""
    pred = [0] + [int(rng.integers(0, i)) for i in range(1, n + 1)]
    Y, A = [], []
    for i in range(n):
        e = rng.normal(size=3)
        e /= np.linalg.norm(e)
        kind = "prismatic" if i % 3 == 2 else "revolute"
        Y.append(screw_from_geometry(e, rng.normal(size=3), kind=kind).vec)
        A.append(exp_screw(rng.normal(size=6), 1.0))
    return TreeModel(pred, np.array(Y), A)


def test_zero_configuration(tree):
    kin = KinematicsCache(tree, np.zeros(tree.n))
    for k in range(1, tree.n + 1):
        assert np.allclose(kin.C[k - 1].matrix(), tree.A[k - 1].matrix(), atol=1e-15)
        assert np.allclose(body_pose(tree, np.zeros(tree.n), k).matrix(),
                           tree.A[k - 1].matrix(), atol=1e-15)


def test_single_revolute_half_turn():
    A1 = Pose(np.eye(3), [1.0, 0.0, 0.0])
    t = TreeModel([0, 0], [screw_from_geometry([0, 0, 1]).vec], [A1])
    C = body_pose(t, [np.pi], 1)
    assert np.allclose(C.R, rot_z(np.pi), atol=1e-15)
    assert np.allclose(C.r, [-1.0, 0.0, 0.0], atol=1e-15)


def test_delta_body5_sparsity(tree, rng):
    th = rng.uniform(-0.5, 0.5, tree.n)
    J5 = body_jacobian(tree, th, 5)
    nz = [i + 1 for i in range(tree.n) if np.any(J5[:, i])]
    assert nz == [1, 2, 5]


@given(seeds)
def test_path_sparsity_and_own_column(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng)
    kin = KinematicsCache(t, rng.normal(size=t.n))
    for k in range(1, t.n + 1):
        for i in range(1, t.n + 1):
            assert bool(np.any(kin.J[k - 1][:, i - 1])) == t.on_path(k, i)
        assert np.array_equal(kin.J[k - 1][:, k - 1], t.X[k - 1])


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_jacobian_vs_finite_difference(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng)
    th = rng.normal(size=t.n)
    kin = KinematicsCache(t, th)
    h = 1e-6
    for i in range(t.n):
        e = np.zeros(t.n)
        e[i] = h
        kp, km = KinematicsCache(t, th + e), KinematicsCache(t, th - e)
        for k in range(t.n):
            Cinv = kin.C[k].inv()
            col = (log_se3(Cinv @ kp.C[k]) - log_se3(Cinv @ km.C[k])) / (2 * h)
            assert np.allclose(col, kin.J[k][:, i], atol=1e-6 * max(1.0, np.abs(col).max()))


@given(seeds)
def test_cached_poses_match_poe(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng)
    th = rng.normal(size=t.n)
    kin = KinematicsCache(t, th)
    for k in range(1, t.n + 1):
        assert np.allclose(kin.C[k - 1].matrix(), body_pose(t, th, k).matrix(), atol=1e-12)
        assert np.allclose(kin.J[k - 1], body_jacobian(t, th, k), atol=1e-12)


def test_system_jacobian_factorization(tree, rng):
    th = rng.normal(size=tree.n)
    A, X, J = system_jacobian(tree, th)
    assert np.array_equal(J, A @ X)
    for k in range(1, tree.n + 1):
        assert np.allclose(J[6 * (k - 1):6 * k], body_jacobian(tree, th, k), atol=1e-14)


def test_system_jacobian_single_joint():
    t = TreeModel([0, 0], [screw_from_geometry([0, 1, 0], [0.2, 0, 0]).vec], [Pose.identity()])
    A, X, _ = system_jacobian(t, [0.3])
    assert np.allclose(A, np.eye(6)) and np.allclose(X[:, 0], t.X[0])


def test_system_jacobian_delta_sparsity(tree, rng):
    """Without the platform, body 5 does not depend on bodies 3 and 4."""
    A, _, _ = system_jacobian(tree, rng.normal(size=tree.n))
    assert not A[24:30, 12:18].any() and not A[24:30, 18:24].any()


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_jacobian_dot_forms_and_fd(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng)
    th, dth = rng.normal(size=t.n), rng.normal(size=t.n)
    kin = KinematicsCache(t, th, dth)
    sysd = system_jacobian_dot(t, th, dth)
    h = 1e-6
    kp, km = KinematicsCache(t, th + h * dth), KinematicsCache(t, th - h * dth)
    for k in range(1, t.n + 1):
        col = jacobian_dot(t, th, dth, k)
        assert np.allclose(col, sysd[6 * (k - 1):6 * k], atol=1e-12)
        assert np.allclose(col, kin.Jd[k - 1], atol=1e-12)
        fd = (kp.J[k - 1] - km.J[k - 1]) / (2 * h)
        assert np.allclose(fd, col, atol=1e-6 * max(1.0, np.abs(fd).max()))


def test_jacobian_dot_zero_rate(tree):
    assert not jacobian_dot(tree, np.ones(tree.n) * 0.1, np.zeros(tree.n), 6).any()


def test_twist_static_and_unit_rate(tree, rng):
    th = rng.normal(size=tree.n) * 0.3
    V, Vd = body_twist_and_acc(tree, th, np.zeros(tree.n), np.zeros(tree.n), 6)
    assert not V.any() and not Vd.any()
    e1 = np.zeros(tree.n)
    e1[0] = 1.0
    V, _ = body_twist_and_acc(tree, th, e1, np.zeros(tree.n), 6)
    assert np.allclose(V, body_jacobian(tree, th, 6)[:, 0], atol=1e-15)


@given(seeds)
def test_twist_rate_along_motion(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng)
    th, dth, ddth = rng.normal(size=(3, t.n))
    h = 1e-5

    def V_at(s):
        return KinematicsCache(t, th + s * dth + 0.5 * s * s * ddth, dth + s * ddth).V

    fd = (V_at(h) - V_at(-h)) / (2 * h)
    kin = KinematicsCache(t, th, dth, ddth)
    assert np.allclose(fd, kin.Vd, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_frame_covariance(rng):
    t = random_tree(rng)
    S = exp_screw(rng.normal(size=6), 1.0)
    t2 = TreeModel(t.pred, (adjoint(S) @ t.Y.T).T, [S @ A for A in t.A])
    th = rng.normal(size=t.n)
    k1, k2 = KinematicsCache(t, th), KinematicsCache(t2, th)
    for k in range(t.n):
        assert np.allclose(k2.J[k], k1.J[k], atol=1e-12)
        assert np.allclose(k2.C[k].matrix(), (S @ k1.C[k]).matrix(), atol=1e-12)


def test_validation():
    with pytest.raises(ValidationError):
        TreeModel([0, 1], [np.zeros(6)], [Pose.identity()])
    t = TreeModel([0, 0], [screw_from_geometry([0, 0, 1]).vec], [Pose.identity()])
    with pytest.raises(ValidationError):
        body_pose(t, [0.0], 2)
