"""Planar FK/Jacobian/IK checks."""

import numpy as np

from throwcatch.kinematics import (
    forward_kinematics,
    joint_points,
    palm_velocity,
    segment_distance,
    solve_ik,
)

LINKS = (0.30, 0.25, 0.10)
BASE = np.array([0.2, 0.5])


def test_straight_arm():
    palm, _ = forward_kinematics(np.zeros(3), BASE, LINKS)
    assert np.allclose(palm, BASE + [0.65, 0.0])


def test_vertical_arm():
    palm, _ = forward_kinematics(np.array([np.pi / 2, 0.0, 0.0]), BASE, LINKS)
    assert np.allclose(palm, BASE + [0.0, 0.65])


def test_jacobian_vs_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        _, jac = forward_kinematics(q, BASE, LINKS)
        h = 1e-7
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            up, _ = forward_kinematics(q + e, BASE, LINKS)
            dn, _ = forward_kinematics(q - e, BASE, LINKS)
            fd = (up - dn) / (2 * h)
            assert np.max(np.abs(fd - jac[:, j])) < 1e-6


def test_palm_velocity_matches_differenced_fk():
    rng = np.random.default_rng(1)
    q = rng.uniform(-1, 1, 3)
    qdot = rng.uniform(-2, 2, 3)
    v = palm_velocity(q, qdot, BASE, LINKS)
    dt = 1e-7
    p1, _ = forward_kinematics(q + qdot * dt, BASE, LINKS)
    p0, _ = forward_kinematics(q - qdot * dt, BASE, LINKS)
    assert np.allclose(v, (p1 - p0) / (2 * dt), atol=1e-6)


def test_joint_points_consistent_with_fk():
    q = np.array([0.4, -0.8, 0.3])
    pts = joint_points(q, BASE, LINKS)
    palm, _ = forward_kinematics(q, BASE, LINKS)
    assert np.allclose(pts[-1], palm)
    assert np.allclose(pts[0], BASE)


def test_ik_reaches_reachable_targets():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q_true = rng.uniform(-1.5, 1.5, 3)
        target, _ = forward_kinematics(q_true, BASE, LINKS)
        q = solve_ik(target, q_true + rng.uniform(-0.3, 0.3, 3), BASE, LINKS)
        palm, _ = forward_kinematics(q, BASE, LINKS)
        assert np.linalg.norm(palm - target) < 1e-4


def test_segment_distance_cases():
    a = np.array([0.0, 0.0])
    b = np.array([1.0, 0.0])
    assert abs(segment_distance(a, b, np.array([0.5, 1.0]), np.array([0.5, 2.0])) - 1.0) < 1e-12
    # crossing segments
    assert segment_distance(a, b, np.array([0.5, -1.0]), np.array([0.5, 1.0])) < 1e-12
    # parallel
    assert abs(segment_distance(a, b, np.array([0.0, 0.3]), np.array([1.0, 0.3])) - 0.3) < 1e-12
