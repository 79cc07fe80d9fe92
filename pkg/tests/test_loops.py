import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkmdyn.errors import SingularityError, ValidationError
from pkmdyn.loops import (CutJointSpec, LoopSolution, assemble_limb_H, cut_body_constraint,
                          cut_joint_angle, cut_joint_rows, loop_solution_dot,
                          solve_velocity_constraints)
from pkmdyn.limb_kin import limb_geometric_fk
from pkmdyn.se3 import Pose, adjoint, log_se3
from pkmdyn.tree_kin import KinematicsCache

seeds = st.integers(0, 2**31 - 1)


def delta_config(rng):
    """Random configuration on the Delta limb constraint manifold."""
    t1, t2, t4, t6 = rng.uniform(-0.8, 0.8, 4)
    return np.array([t1, t2, -t4, t4, -t4, t6])


def fourbar_config(limb, q):
    th, _ = limb_geometric_fk(limb, [q], np.zeros(limb.n))
    return th


def test_residual_zero_at_closure(delta, rng):
    lb = delta.limbs[0]
    kin = KinematicsCache(lb.tree, delta_config(rng))
    assert np.max(np.abs(lb.loops.residual(kin))) < 1e-14


def test_delta_cut_joint_row_structure(delta, rng):
    lb = delta.limbs[0]
    c = lb.loops.cycles[0]
    kin = KinematicsCache(lb.tree, delta_config(rng))
    _, G = cut_joint_rows(c.cut, kin)
    assert c.cut.m == 5 and G.shape == (5, 6)
    zero_rows = [i for i in range(5) if np.max(np.abs(G[i])) < 1e-14]
    assert len(zero_rows) == 3
    assert np.linalg.matrix_rank(G[:, [v - 1 for v in c.vars]]) == 2


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_cut_joint_rows_vs_fd(seed):
    from pkmdyn import build_fourbar
    fb = _FB.setdefault("fb", build_fourbar())
    lb = fb.limbs[0]
    rng = np.random.default_rng(seed)
    th = rng.normal(size=lb.n) * 0.5
    c = lb.loops.cycles[0]
    _, G = cut_joint_rows(c.cut, KinematicsCache(lb.tree, th))
    h = 1e-6
    for i in range(lb.n):
        e = np.zeros(lb.n)
        e[i] = h
        fd = (cut_joint_rows(c.cut, KinematicsCache(lb.tree, th + e))[0]
              - cut_joint_rows(c.cut, KinematicsCache(lb.tree, th - e))[0]) / (2 * h)
        assert np.allclose(fd, G[:, i], atol=1e-6)


_FB = {}


def test_custom_cut_joint_needs_rows():
    with pytest.raises(ValidationError):
        CutJointSpec(1, 2, Pose.identity(), Pose.identity(), kind="custom")


def test_delta_loop_solution(delta, rng):
    lb = delta.limbs[0]
    c = lb.loops.cycles[0]
    for _ in range(20):
        th = delta_config(rng)
        thd = np.array([rng.normal(), rng.normal(), 0.0, 0.0, 0.0, rng.normal()])
        thd[2:5] = np.array([-1.0, 1.0, -1.0]) * rng.normal()
        kin = KinematicsCache(lb.tree, th, thd)
        sol = lb.loops.cycle_solution(c, kin)
        assert np.allclose(sol.H.ravel(), [-1, -1, 1], atol=1e-12)
        assert np.array_equal(sol.H[len(sol.y):], np.eye(1))
        assert np.allclose(sol.Hd, 0.0, atol=1e-12)


def test_delta_cut_body_solution(delta_cb, rng):
    lb = delta_cb.limbs[0]
    c = lb.loops.cycles[0]
    kin = KinematicsCache(lb.tree, delta_config(rng))
    sol = lb.loops.cycle_solution(c, kin)
    assert np.allclose(sol.H.ravel(), [-1, -1, -1, 1], atol=1e-12)


def test_cut_body_identity_and_columns(delta_cb, rng):
    lb = delta_cb.limbs[0]
    c = lb.loops.cycles[0]
    kin0 = KinematicsCache(lb.tree, np.zeros(6))
    g, G = cut_body_constraint(c, lb.tree, kin0)
    assert np.allclose(g.matrix(), np.eye(4), atol=1e-15)
    # columns sigma_i S_i: (S3, S4, -S5, S7)
    assert c.sigma == {3: 1, 4: 1, 5: -1}
    th = delta_config(rng)
    kin = KinematicsCache(lb.tree, th)
    g, G = cut_body_constraint(c, lb.tree, kin, cut_joint_angle(c.cut, kin))
    assert np.allclose(g.matrix(), np.eye(4), atol=1e-14)
    S = [adjoint(kin.C[i - 1]) @ lb.tree.X[i - 1] for i in (3, 4, 5)]
    assert np.allclose(G[:, :3], np.column_stack([S[0], S[1], -S[2]]), atol=1e-14)


def test_cut_body_first_order(delta_cb):
    lb = delta_cb.limbs[0]
    c = lb.loops.cycles[0]
    eps = 1e-6
    th = np.zeros(6)
    th[2] = eps
    g, G = cut_body_constraint(c, lb.tree, KinematicsCache(lb.tree, np.zeros(6)))
    g_eps, _ = cut_body_constraint(c, lb.tree, KinematicsCache(lb.tree, th))
    assert np.allclose(log_se3(g_eps), eps * G[:, 0], atol=1e-11)


def test_formulations_agree(delta, delta_cb, rng):
    for _ in range(10):
        th = delta_config(rng)
        H1, _, _ = delta.limbs[0].loops.solve(KinematicsCache(delta.limbs[0].tree, th), False)
        H2, _, _ = delta_cb.limbs[0].loops.solve(KinematicsCache(delta_cb.limbs[0].tree, th), False)
        assert np.allclose(H1, H2, atol=1e-12)


def test_unconstrained_solution():
    sol = solve_velocity_constraints(np.zeros((0, 3)))
    assert np.array_equal(sol.H, np.eye(3))


def test_redundant_rows_are_reduced():
    G = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]])
    sol = solve_velocity_constraints(G, q=[2])
    assert sol.rank == 2
    assert np.allclose(G @ sol.full(3), 0.0, atol=1e-12)


def test_singular_partition():
    G = np.array([[1.0, 0.0, 1.0]])
    with pytest.raises(SingularityError):
        solve_velocity_constraints(G, q=[0, 2])
    G = np.array([[0.0, 1.0, 1.0]])
    with pytest.raises(SingularityError):
        solve_velocity_constraints(G, q=[1, 2])
    # auto mode picks a usable dependent coordinate
    sol = solve_velocity_constraints(G)
    assert np.allclose(G @ sol.full(3), 0.0)


def test_hdot_zero_for_constant_g():
    G = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, 1.0]])
    sol = solve_velocity_constraints(G, q=[2])
    assert not loop_solution_dot(G, np.zeros_like(G), sol).any()


def test_parallelogram_fourbar_constant_h(parallelogram, rng):
    lb = parallelogram.limbs[0]
    for q in rng.uniform(-0.6, 0.6, 10):
        th = fourbar_config(lb, q)
        # joint order (crank, coupler, rocker) with the coupler joint independent
        thd = np.array([-1.0, 1.0, -1.0]) * rng.normal()
        H, Hd, _ = lb.loops.solve(KinematicsCache(lb.tree, th, thd))
        assert np.allclose(H.ravel(), [-1, 1, -1], atol=1e-10)
        assert np.allclose(Hd, 0.0, atol=1e-10)


def test_generic_fourbar_hdot_vs_fd(fourbar, rng):
    lb = fourbar.limbs[0]
    Hs = []
    for _ in range(5):
        th = fourbar_config(lb, rng.uniform(-0.3, 0.3))
        qd = rng.normal()
        H, Hd, _ = lb.loops.solve(KinematicsCache(lb.tree, th, np.zeros(lb.n)), False)
        thd = (H * qd).ravel()
        _, Hd, _ = lb.loops.solve(KinematicsCache(lb.tree, th, thd))
        h = 1e-6
        Hp, _, _ = lb.loops.solve(KinematicsCache(lb.tree, th + h * thd), False)
        Hm, _, _ = lb.loops.solve(KinematicsCache(lb.tree, th - h * thd), False)
        assert np.allclose((Hp - Hm) / (2 * h), Hd, atol=1e-5)
        assert np.abs(Hd).max() > 1e-3
        Hs.append(H)
    assert np.ptp(np.array(Hs), axis=0).max() > 1e-3


def test_nullspace_and_acceleration_constraints(fourbar, rng):
    lb = fourbar.limbs[0]
    c = lb.loops.cycles[0]
    for _ in range(20):
        th = fourbar_config(lb, rng.uniform(-0.4, 0.4))
        qd, qdd = rng.normal(size=2)
        kin0 = KinematicsCache(lb.tree, th)
        H, _, _ = lb.loops.solve(kin0, False)
        thd = (H * qd).ravel()
        kin = KinematicsCache(lb.tree, th, thd)
        H, Hd, _ = lb.loops.solve(kin)
        thdd = (H * qdd + Hd * qd).ravel()
        kin = KinematicsCache(lb.tree, th, thd, thdd)
        _, G, Gd = cut_joint_rows(c.cut, kin, True)
        assert np.max(np.abs(G @ thd)) < 1e-10
        assert np.max(np.abs(G @ thdd + Gd @ thd)) < 1e-8


def test_assemble_without_loops():
    H, Hd, q, P = assemble_limb_H(3, [], [], [1, 2, 3])
    assert np.array_equal(H, np.eye(3)) and not Hd.any() and q == [1, 2, 3]


def test_assemble_two_cycles_block_structure():
    s1 = LoopSolution(np.array([[2.0], [3.0], [1.0]]), None, [0, 2], [1], 1.0, 2)
    s2 = LoopSolution(np.array([[4.0, 5.0], [1.0, 0.0], [0.0, 1.0]]), None, [1], [0, 2], 1.0, 1)
    H, _, q, P = assemble_limb_H(6, [s1, s2], [[1, 2, 3], [4, 5, 6]], [])
    assert q == [2, 4, 6]
    # before the row permutation: [[H1, 0], [0, H2]]
    B = P.T @ H
    assert np.array_equal(B[:3, :1], s1.H) and np.array_equal(B[3:, 1:], s2.H)
    assert not B[:3, 1:].any() and not B[3:, :1].any()
    with pytest.raises(ValidationError):
        assemble_limb_H(4, [s1, s1], [[1, 2, 3], [3, 4, 2]], [])
