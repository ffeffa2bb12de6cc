"""Free-flight integration and release solving against closed forms."""

import numpy as np
import pytest

from throwcatch.ballistics import (
    ballistic_step,
    closest_approach,
    flight_position,
    solve_release,
)
from throwcatch.errors import ContractViolation


def test_single_substep_drop():
    p, v = ballistic_step(np.zeros(2), np.zeros(2), 1.0 / 120.0)
    assert abs(p[1] + 0.5 * 9.81 / 120**2) < 1e-15
    assert p[0] == 0.0


def test_horizontal_velocity_unchanged():
    p, v = np.array([0.0, 1.0]), np.array([2.0, 0.5])
    for _ in range(500):
        p, v = ballistic_step(p, v, 1.0 / 120.0)
    assert v[0] == 2.0


def test_matches_closed_form_over_full_episode():
    p0 = np.array([0.4, 1.0])
    v0 = np.array([1.0, 1.5])
    p, v = p0.copy(), v0.copy()
    dt = 1.0 / 120.0
    for i in range(1, 361):
        p, v = ballistic_step(p, v, dt)
        analytic = flight_position(p0, v0, i * dt)
        assert np.max(np.abs(p - analytic)) < 1e-9


def test_half_second_flight_example():
    p = flight_position(np.array([0.4, 1.0]), np.array([1.0, 1.5]), 0.5)
    assert abs(p[0] - 0.9) < 1e-9
    assert abs(p[1] - (1.0 + 0.75 - 0.5 * 9.81 * 0.25)) < 1e-9


def test_energy_conserved():
    m = 0.4
    p = np.array([0.0, 1.2])
    v = np.array([1.5, 2.0])
    e0 = 0.5 * m * (v @ v) + m * 9.81 * p[1]
    for _ in range(360):
        p, v = ballistic_step(p, v, 1.0 / 120.0)
    e1 = 0.5 * m * (v @ v) + m * 9.81 * p[1]
    assert abs(e1 - e0) / abs(e0) < 1e-9


class TestSolveRelease:
    def test_vertical_throw(self):
        v = solve_release(np.array([0.5, 1.0]), np.array([0.5, 1.0]), 0.5)
        assert np.allclose(v, [0.0, 0.5 * 9.81 * 0.5])
        assert abs(v[1] - 2.4525) < 1e-12

    def test_horizontal_component_independent_of_gravity(self):
        pr = np.array([0.1, 1.0])
        pt = np.array([0.9, 0.8])
        v1 = solve_release(pr, pt, 0.4, g=9.81)
        v2 = solve_release(pr, pt, 0.4, g=3.0)
        assert v1[0] == v2[0]

    def test_forward_simulation_hits_target(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pr = rng.uniform([0.0, 0.6], [0.5, 1.2])
            pt = rng.uniform([0.7, 0.6], [1.2, 1.1])
            t = rng.uniform(0.25, 0.9)
            v = solve_release(pr, pt, t)
            n = 240
            dt = t / n
            p, vel = pr.copy(), v.copy()
            for _ in range(n):
                p, vel = ballistic_step(p, vel, dt)
            assert np.linalg.norm(p - pt) < 1e-9

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ContractViolation):
            solve_release(np.zeros(2), np.ones(2), 0.0)


def test_closest_approach_on_known_parabola():
    pr = np.array([0.0, 1.0])
    pt = np.array([0.8, 0.9])
    v = solve_release(pr, pt, 0.5)
    d, t = closest_approach(pr, v, pt, 1.0)
    assert d < 1e-3
    assert abs(t - 0.5) < 5e-3
