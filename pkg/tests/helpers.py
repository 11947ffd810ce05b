"""Shared generators for randomized sweeps."""

import numpy as np

from parkplanner.geometry import ConvexPolytope


def random_polytope(rng, h=None, center_range=10.0, radius_range=(0.3, 2.5)):
    """Random bounded polytope: h unit normals positively spanning the plane.

    Offsets are taken from a random interior center, so the set is nonempty
    by construction; the angular-gap condition keeps it bounded.
    """
    if h is None:
        h = int(rng.integers(3, 9))
    while True:
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, h))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        if gaps.max() < np.pi - 0.05:
            break
    A = np.column_stack([np.cos(ang), np.sin(ang)])
    c = rng.uniform(-center_range, center_range, 2)
    b = A @ c + rng.uniform(*radius_range, h)
    return ConvexPolytope(A, b)


def polytope_point_samples(P, n_per_axis=60):
    """Dense grid of points inside P, for sampling-based distance oracles."""
    lo = P.vertices.min(axis=0)
    hi = P.vertices.max(axis=0)
    xs = np.linspace(lo[0], hi[0], n_per_axis)
    ys = np.linspace(lo[1], hi[1], n_per_axis)
    XX, YY = np.meshgrid(xs, ys)
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    inside = np.all(P.A @ pts.T <= P.b[:, None] + 1e-12, axis=0)
    return pts[inside]
