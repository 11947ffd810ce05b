import numpy as np
import pytest

from parkplanner.geometry import (
    ConvexPolytope,
    Pose2D,
    footprint_polytope,
    make_footprint,
    polytope_distance,
    polytopes_intersect,
    rectangle_polytope,
    transform_polytope,
)

from helpers import polytope_point_samples, random_polytope


def unit_square(cx=0.0, cy=0.0, half=1.0):
    return rectangle_polytope(cx, cy, 2 * half, 2 * half)


def test_make_footprint_paper_dimensions():
    fp = make_footprint(4.7, 2.0)
    assert np.allclose(fp.g, [2.35, 1.0, 2.35, 1.0])
    assert np.array_equal(fp.G, [[1, 0], [0, 1], [-1, 0], [0, -1]])


def test_make_footprint_square():
    fp = make_footprint(2.0, 2.0)
    assert np.allclose(fp.g, [1.0, 1.0, 1.0, 1.0])


def test_make_footprint_rejects_degenerate():
    with pytest.raises(ValueError):
        make_footprint(0.0, 1.0)


def test_construction_rejects_empty():
    # x <= -1 and x >= 1 cannot hold together
    A = [[1, 0], [-1, 0], [0, 1], [0, -1]]
    with pytest.raises(ValueError):
        ConvexPolytope(A, [-1, -1, 1, 1])


def test_construction_rejects_unbounded():
    A = [[1, 0], [0, 1], [-1, 0]]
    with pytest.raises(ValueError):
        ConvexPolytope(A, [1, 1, 1])  # open toward -y


def test_construction_rejects_too_few_faces():
    with pytest.raises(ValueError):
        ConvexPolytope([[1, 0], [-1, 0]], [1, 1])


def test_rows_unit_normalized():
    P = ConvexPolytope([[2, 0], [0, 3], [-5, 0], [0, -1]], [2, 3, 5, 1])
    assert np.allclose(np.linalg.norm(P.A, axis=1), 1.0)
    assert np.allclose(P.b, [1, 1, 1, 1])


def test_vertices_satisfy_halfspaces():
    rng = np.random.default_rng(7)
    for _ in range(50):
        P = random_polytope(rng)
        assert np.all(P.A @ P.vertices.T <= P.b[:, None] + 1e-7)


def test_transform_identity_exact():
    P = unit_square()
    Q = transform_polytope(P, Pose2D(0.0, 0.0, 0.0))
    assert np.allclose(Q.A, P.A)
    assert np.allclose(Q.b, P.b)


def test_transform_pure_translation():
    Q = transform_polytope(unit_square(), Pose2D(3.0, 0.0, 0.0))
    # x-faces move to 2 and 4
    xs = Q.vertices[:, 0]
    assert xs.min() == pytest.approx(2.0)
    assert xs.max() == pytest.approx(4.0)


def test_transform_quarter_turn_swaps_extents():
    fp = make_footprint(4.7, 2.0)
    Q = footprint_polytope(fp, Pose2D(0.0, 0.0, np.pi / 2))
    assert Q.vertices[:, 0].min() == pytest.approx(-1.0)
    assert Q.vertices[:, 0].max() == pytest.approx(1.0)
    assert Q.vertices[:, 1].min() == pytest.approx(-2.35)
    assert Q.vertices[:, 1].max() == pytest.approx(2.35)


def test_transform_roundtrip_1000_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        P = random_polytope(rng)
        pose = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi))
        R = pose.rotation()
        t = pose.translation()
        inv = Pose2D(*(-R.T @ t), -pose.phi)
        Q = transform_polytope(transform_polytope(P, pose), inv)
        assert np.allclose(Q.A, P.A, atol=1e-10)
        assert np.allclose(Q.b, P.b, atol=1e-10)


def test_distance_axis_aligned_gap():
    assert polytope_distance(unit_square(0, 0), unit_square(4, 0)) == pytest.approx(2.0)


def test_distance_overlapping_zero():
    assert polytope_distance(unit_square(0, 0), unit_square(1.5, 0)) == 0.0


def test_distance_diagonal_matches_sampling_oracle():
    P = unit_square(0, 0)
    Q = unit_square(3, 3)
    d = polytope_distance(P, Q)
    assert d == pytest.approx(np.sqrt(2.0), abs=1e-12)
    # independent dense point-sampling oracle (upper bound converging from above)
    sp = polytope_point_samples(P, 80)
    sq = polytope_point_samples(Q, 80)
    diffs = sp[:, None, :] - sq[None, :, :]
    d_sample = np.sqrt((diffs ** 2).sum(axis=2)).min()
    assert d <= d_sample + 1e-12
    assert d_sample - d < 0.05


def test_intersect_touching_counts():
    assert polytopes_intersect(unit_square(0, 0), unit_square(2, 0))
    assert polytope_distance(unit_square(0, 0), unit_square(2, 0)) == 0.0


def test_intersect_small_gap_false():
    assert not polytopes_intersect(unit_square(0, 0), unit_square(2.001, 0))


def test_intersect_nested_true():
    assert polytopes_intersect(unit_square(0, 0, half=2.0), unit_square(0.2, 0.1, half=0.5))


def test_distance_symmetric_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        P, Q = random_polytope(rng), random_polytope(rng)
        assert polytope_distance(P, Q) == pytest.approx(polytope_distance(Q, P), abs=1e-12)


def test_intersect_iff_zero_distance_1000_pairs():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        P, Q = random_polytope(rng), random_polytope(rng)
        d = polytope_distance(P, Q)
        inter = polytopes_intersect(P, Q)
        if inter:
            assert d <= 1e-9
        else:
            assert d > 1e-9


def test_distance_shift_bound():
    # |d(P,Q) - d(P,Q+s)| <= |s|, and Hausdorff(Q, Q+s) = |s| for a rigid shift
    rng = np.random.default_rng(13)
    for _ in range(200):
        P, Q = random_polytope(rng), random_polytope(rng)
        s = rng.uniform(-0.5, 0.5, 2)
        Qs = transform_polytope(Q, Pose2D(s[0], s[1], 0.0))
        d0, d1 = polytope_distance(P, Q), polytope_distance(P, Qs)
        assert abs(d0 - d1) <= np.linalg.norm(s) + 1e-9
