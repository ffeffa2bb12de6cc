"""Planar 3-link arm kinematics in the (x, z) plane."""

from __future__ import annotations

import numpy as np


def joint_points(q: np.ndarray, base: np.ndarray, link_lengths) -> np.ndarray:
    """Positions of base + the three link endpoints, shape (4, 2)."""
    pts = np.empty((4, 2))
    pts[0] = base
    angle = 0.0
    p = np.asarray(base, dtype=float).copy()
    for i, length in enumerate(link_lengths):
        angle += q[i]
        p = p + length * np.array([np.cos(angle), np.sin(angle)])
        pts[i + 1] = p
    return pts


def forward_kinematics(q: np.ndarray, base: np.ndarray, link_lengths):
    """Palm position and its 2x3 Jacobian for a serial planar chain."""
    angles = np.cumsum(q[:3])
    lengths = np.asarray(link_lengths, dtype=float)
    cx = lengths * np.cos(angles)
    sz = lengths * np.sin(angles)
    palm = np.asarray(base, dtype=float) + np.array([cx.sum(), sz.sum()])
    jac = np.empty((2, 3))
    for j in range(3):
        # joint j moves every link at or beyond it
        jac[0, j] = -sz[j:].sum()
        jac[1, j] = cx[j:].sum()
    return palm, jac


def palm_velocity(q: np.ndarray, qdot: np.ndarray, base, link_lengths) -> np.ndarray:
    _, jac = forward_kinematics(q, base, link_lengths)
    return jac @ np.asarray(qdot[:3], dtype=float)


def solve_ik(
    target: np.ndarray,
    q0: np.ndarray,
    base,
    link_lengths,
    iters: int = 200,
    damping: float = 1e-3,
    tol: float = 1e-10,
) -> np.ndarray:
    """Damped least-squares IK; deterministic given q0."""
    q = np.asarray(q0, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    for _ in range(iters):
        palm, jac = forward_kinematics(q, base, link_lengths)
        err = target - palm
        if err @ err < tol:
            break
        jjt = jac @ jac.T + damping * np.eye(2)
        q += jac.T @ np.linalg.solve(jjt, err)
    return q


def segment_distance(p1, p2, p3, p4) -> float:
    """Minimum distance between segments p1-p2 and p3-p4."""
    d1 = p2 - p1
    d2 = p4 - p3
    r = p1 - p3
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a <= 1e-12 and e <= 1e-12:
        return float(np.linalg.norm(r))
    if a <= 1e-12:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= 1e-12:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-12 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    closest1 = p1 + s * d1
    closest2 = p3 + t * d2
    return float(np.linalg.norm(closest1 - closest2))
