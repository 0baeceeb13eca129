"""Shared independent oracles and scene builders for the test suite."""

import numpy as np


def random_rotation(rng):
    """Uniform rotation from a random unit quaternion (independent of the package)."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def aerial_pose(rng, half=7.5):
    """Camera center 7-8 m up looking at a random ground point, as (R, t)."""
    C = np.array([rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(7, 8)])
    target = np.array([rng.uniform(-half, half), rng.uniform(-half, half), 0.0])
    f = target - C
    f /= np.linalg.norm(f)
    r = np.cross(f, [0.0, 0.0, 1.0])
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.stack([r, d, f])
    return R, -R @ C


def segment_hits_box_sat(C, P, lo, hi):
    """Separating-axis test between segment CP and an axis-aligned box.

    Candidate axes are the three box normals and the cross products of the
    segment direction with each of them. True when no axis separates.
    """
    C, P, lo, hi = (np.asarray(a, float) for a in (C, P, lo, hi))
    c = 0.5 * (lo + hi)
    e = 0.5 * (hi - lo)
    m = 0.5 * (C + P)
    h = 0.5 * (P - C)
    d = m - c
    a = np.abs(h)
    for i in range(3):
        if abs(d[i]) > e[i] + a[i]:
            return False
    if abs(d[1] * h[2] - d[2] * h[1]) > e[1] * a[2] + e[2] * a[1]:
        return False
    if abs(d[2] * h[0] - d[0] * h[2]) > e[0] * a[2] + e[2] * a[0]:
        return False
    if abs(d[0] * h[1] - d[1] * h[0]) > e[0] * a[1] + e[1] * a[0]:
        return False
    return True


def random_los_triple(rng):
    """Camera in the air, pedestrian anchor near the ground, box anywhere or near the segment."""
    C = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(5, 10)])
    P = np.array([rng.uniform(-15, 15), rng.uniform(-15, 15), rng.uniform(0, 1.7)])
    if rng.random() < 0.5:
        center = np.array([rng.uniform(-15, 15), rng.uniform(-15, 15), rng.uniform(0, 6)])
    else:
        # near the segment so that both outcomes are well represented
        center = C + rng.uniform(-0.2, 1.2) * (P - C) + rng.normal(scale=2.0, size=3)
    half = rng.uniform(0.2, 5.0, size=3)
    return C, P, center - half, center + half
