"""Convex polytopes, rigid transforms, and exact distance/intersection oracles.

Obstacles and the vehicle footprint are all halfspace sets {y : A y <= b}
in the plane. The distance oracle here is deliberately independent of the
dual-variable machinery in :mod:`parkplanner.duality`: it enumerates the
candidate active sets of the underlying distance QP (vertex/edge pairs of
the two polygons) and is exact to floating-point precision. It is used for
collision checking and for verifying the dual constraints, never inside
the NMPC solve itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

_FEAS_TOL = 1e-9


def wrap_angle(phi: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    w = (phi + np.pi) % (2.0 * np.pi)
    if w == 0.0:
        return np.pi
    return w - np.pi


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; phi is stored normalized to (-pi, pi]."""

    x: float
    y: float
    phi: float

    def __post_init__(self):
        if not np.isfinite([self.x, self.y, self.phi]).all():
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "phi", float(wrap_angle(self.phi)))

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.phi)

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ConvexPolytope:
    """Bounded nonempty halfspace set {y : A y <= b} with unit-norm rows.

    Rows of A are normalized at construction so the offsets b carry meters.
    Construction solves four support LPs (max +-x, max +-y) to reject empty
    or unbounded input, then enumerates the vertex set once; both checks can
    be skipped internally when validity is preserved by construction (rigid
    transforms).
    """

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[1] != 2 or A.shape[0] != b.shape[0]:
            raise ValueError("A must be (h, 2) with matching b of length h")
        if A.shape[0] < 3:
            raise ValueError("a bounded planar polytope needs at least 3 halfspaces")
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("halfspace data must be finite")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("each halfspace normal must have nonzero norm")
        A = A / norms[:, None]
        b = b / norms
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self._validate:
            _check_bounded_nonempty(A, b)
        verts = self.vertices
        if verts is None:
            verts = _enumerate_vertices(A, b)
        object.__setattr__(self, "vertices", np.asarray(verts, dtype=float))
        object.__setattr__(self, "_validate", True)

    @property
    def h(self) -> int:
        return self.A.shape[0]

    def contains(self, point, tol: float = _FEAS_TOL) -> bool:
        return bool(np.all(self.A @ np.asarray(point, dtype=float) <= self.b + tol))


def _check_bounded_nonempty(A: np.ndarray, b: np.ndarray) -> None:
    """Support LPs along +-x and +-y; rejects empty and unbounded sets."""
    for c in ([-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]):
        res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
        if res.status == 2:
            raise ValueError("polytope is empty")
        if res.status == 3:
            raise ValueError("polytope is unbounded")
        if res.status != 0:
            raise ValueError(f"support LP failed with status {res.status}")


def _enumerate_vertices(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All pairwise halfspace intersections that satisfy the full system.

    Returns vertices sorted counter-clockwise around their centroid.
    Degenerate (point or segment) polytopes yield 1 or 2 vertices.
    """
    h = A.shape[0]
    pts = []
    for i in range(h):
        for j in range(i + 1, h):
            M = A[[i, j]]
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-12:
                continue
            v = np.linalg.solve(M, b[[i, j]])
            if np.all(A @ v <= b + 1e-7 * (1.0 + np.abs(b))):
                pts.append(v)
    if not pts:
        raise ValueError("polytope has no vertices; inconsistent halfspace data")
    P = np.array(pts)
    # dedupe within tolerance
    keep = []
    for v in P:
        if not any(np.linalg.norm(v - w) < 1e-9 for w in keep):
            keep.append(v)
    P = np.array(keep)
    center = P.mean(axis=0)
    order = np.argsort(np.arctan2(P[:, 1] - center[1], P[:, 0] - center[0]))
    return P[order]


@dataclass(frozen=True)
class FootprintSpec:
    """Axis-aligned body rectangle {y : G y <= g} in the vehicle frame.

    The rectangle is centered on the rear-axle point by default; a positive
    rear_axle_offset shifts the body forward along +x without changing G.
    """

    G: np.ndarray
    g: np.ndarray
    body_length: float
    body_width: float
    rear_axle_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "G", np.asarray(self.G, dtype=float))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        if self.G.shape != (4, 2) or self.g.shape != (4,):
            raise ValueError("footprint needs G (4x2) and g (4,)")
        if np.any(self.g <= 0):
            raise ValueError("footprint extents must be positive")

    def base_polytope(self) -> ConvexPolytope:
        """Body rectangle at the origin pose, offset applied."""
        shift = self.G @ np.array([self.rear_axle_offset, 0.0])
        return ConvexPolytope(self.G, self.g + shift)


_BOX_G = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def make_footprint(L_body: float, W: float, rear_axle_offset: float = 0.0) -> FootprintSpec:
    """Build the vehicle body rectangle: g = [L/2, W/2, L/2, W/2]."""
    if L_body <= 0 or W <= 0:
        raise ValueError("body dimensions must be positive")
    g = np.array([L_body / 2.0, W / 2.0, L_body / 2.0, W / 2.0])
    return FootprintSpec(_BOX_G.copy(), g, float(L_body), float(W), float(rear_axle_offset))


def rectangle_polytope(cx: float, cy: float, length: float, width: float,
                       angle: float = 0.0) -> ConvexPolytope:
    """Rectangle obstacle centered at (cx, cy), long axis along `angle`."""
    base = ConvexPolytope(_BOX_G, [length / 2.0, width / 2.0, length / 2.0, width / 2.0],
                          _validate=False)
    return transform_polytope(base, Pose2D(cx, cy, angle))


def transform_polytope(P: ConvexPolytope, pose: Pose2D) -> ConvexPolytope:
    """Rigid transform R(phi) P + t as a new polytope.

    {y : A R' y <= b + A R' t} with R' = R(phi)^T; rows stay unit-norm, so
    validity is preserved and the construction checks are skipped.
    """
    R = pose.rotation()
    t = pose.translation()
    ARt = P.A @ R.T
    b = P.b + ARt @ t
    verts = P.vertices @ R.T + t
    return ConvexPolytope(ARt, b, vertices=verts, _validate=False)


def footprint_polytope(spec: FootprintSpec, pose: Pose2D) -> ConvexPolytope:
    """Footprint E(z) = R(phi) B0 + T(x, y) at the given pose."""
    return transform_polytope(spec.base_polytope(), pose)


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Exact segment intersection via orientation signs (touching counts)."""
    d1 = _cross2(p2 - p1, q1 - p1)
    d2 = _cross2(p2 - p1, q2 - p1)
    d3 = _cross2(q2 - q1, p1 - q1)
    d4 = _cross2(q2 - q1, p2 - q1)
    if ((d1 > 0) != (d2 > 0) or d1 == 0 or d2 == 0) and \
       ((d3 > 0) != (d4 > 0) or d3 == 0 or d4 == 0):
        # possibly collinear touches; confirm with bounding overlap
        if d1 == 0 and d2 == 0:
            lo = np.maximum(np.minimum(p1, p2), np.minimum(q1, q2))
            hi = np.minimum(np.maximum(p1, p2), np.maximum(q1, q2))
            return bool(np.all(lo <= hi + 1e-15))
        return True
    return False


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-30:
        return float(np.linalg.norm(p - a))
    s = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def _polygons_overlap(P: ConvexPolytope, Q: ConvexPolytope) -> bool:
    VP, VQ = P.vertices, Q.vertices
    if np.any(np.all(Q.A @ VP.T <= Q.b[:, None] + 1e-12, axis=0)):
        return True
    if np.any(np.all(P.A @ VQ.T <= P.b[:, None] + 1e-12, axis=0)):
        return True
    np_, nq = len(VP), len(VQ)
    for i in range(np_):
        a1, a2 = VP[i], VP[(i + 1) % np_]
        for j in range(nq):
            if _segments_intersect(a1, a2, VQ[j], VQ[(j + 1) % nq]):
                return True
    return False


def polytope_distance(P: ConvexPolytope, Q: ConvexPolytope) -> float:
    """Exact min ||p - q|| over p in P, q in Q; 0 when the sets intersect.

    Solves the distance QP exactly by enumerating its candidate active sets:
    the minimizer of a convex polygon pair is attained at a (vertex, edge)
    or (vertex, vertex) pair once the sets are known to be disjoint.
    """
    if _polygons_overlap(P, Q):
        return 0.0
    best = np.inf
    VP, VQ = P.vertices, Q.vertices
    np_, nq = len(VP), len(VQ)
    for p in VP:
        for j in range(nq):
            best = min(best, _point_segment_distance(p, VQ[j], VQ[(j + 1) % nq]))
    for q in VQ:
        for i in range(np_):
            best = min(best, _point_segment_distance(q, VP[i], VP[(i + 1) % np_]))
    return float(best)


def polytopes_intersect(P: ConvexPolytope, Q: ConvexPolytope) -> bool:
    """LP feasibility of the joint system {A_P y <= b_P, A_Q y <= b_Q}."""
    A = np.vstack([P.A, Q.A])
    b = np.concatenate([P.b, Q.b])
    res = linprog(np.zeros(2), A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
    return res.status == 0
