"""Exact constant-gravity flight in the (x, z) plane."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

GRAVITY = 9.81  # m/s^2, acting along -z


def ballistic_step(p: np.ndarray, v: np.ndarray, dt: float, g: float = GRAVITY):
    """Advance a free object by dt (exact for constant acceleration)."""
    g_vec = np.array([0.0, -g])
    p_next = p + v * dt + 0.5 * g_vec * dt * dt
    v_next = v + g_vec * dt
    return p_next, v_next


def flight_position(p0, v0, t: float, g: float = GRAVITY) -> np.ndarray:
    p0 = np.asarray(p0, float)
    v0 = np.asarray(v0, float)
    return np.array(
        [p0[0] + v0[0] * t, p0[1] + v0[1] * t - 0.5 * g * t * t]
    )


def solve_release(p_release, p_target, t_flight: float, g: float = GRAVITY) -> np.ndarray:
    """Release velocity such that the object passes through p_target at t_flight."""
    if t_flight <= 0.0:
        raise ContractViolation("flight time must be positive")
    p_release = np.asarray(p_release, float)
    p_target = np.asarray(p_target, float)
    vx = (p_target[0] - p_release[0]) / t_flight
    vz = (p_target[1] - p_release[1]) / t_flight + 0.5 * g * t_flight
    return np.array([vx, vz])


def closest_approach(p0, v0, target, t_max: float, g: float = GRAVITY, n: int = 2000):
    """Minimum distance of the analytic trajectory to a point over [0, t_max]."""
    ts = np.linspace(0.0, t_max, n)
    xs = p0[0] + v0[0] * ts
    zs = p0[1] + v0[1] * ts - 0.5 * g * ts * ts
    d2 = (xs - target[0]) ** 2 + (zs - target[1]) ** 2
    i = int(np.argmin(d2))
    return float(np.sqrt(d2[i])), float(ts[i])
