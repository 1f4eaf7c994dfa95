import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stacksupport.geometry import (
    MBR2,
    GeometryError,
    Plane,
    Region,
    RigidTransform,
    align_to_ground,
    min_area_rect,
    ombb_from_plane,
    project_mbr,
    ransac_plane,
    region_centroid,
    region_radius,
)

CUBE_CORNERS = np.array(list(itertools.product((0.0, 1.0), repeat=3)))


def cube_surface(n=12, size=(1.0, 1.0, 1.0)):
    """Points on the surface of an axis-aligned box anchored at the origin."""
    g = np.linspace(0, 1, n)
    u, v = np.meshgrid(g, g)
    u, v = u.ravel(), v.ravel()
    faces = []
    for axis in range(3):
        for side in (0.0, 1.0):
            p = np.zeros((len(u), 3))
            others = [a for a in range(3) if a != axis]
            p[:, axis] = side
            p[:, others[0]] = u
            p[:, others[1]] = v
            faces.append(p)
    return np.unique(np.vstack(faces), axis=0) * np.asarray(size)


finite = st.floats(-100, 100, allow_nan=False)
point_sets = st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=30).map(np.array)


@st.composite
def transforms(draw):
    q = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0, 0, 0])
    w, x, y, z = q / np.linalg.norm(q)
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return RigidTransform(R, [draw(finite) for _ in range(3)])


class TestRegionStatistics:
    def test_centroid_examples(self):
        assert np.allclose(region_centroid(Region(1, [[0, 0, 0], [2, 0, 0]])), [1, 0, 0])
        assert np.allclose(region_centroid(Region(1, [[1, 1, 1]])), [1, 1, 1])

    def test_centroid_uniform_cube(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, (1000, 3))
        c = region_centroid(Region(1, pts))
        oracle = [math.fsum(pts[:, k]) / len(pts) for k in range(3)]
        assert np.allclose(c, oracle, atol=1e-12)
        assert np.all(np.abs(c - 0.5) < 0.05)

    def test_radius_examples(self):
        assert region_radius(Region(1, [[0, 0, 0], [2, 0, 0]])) == pytest.approx(1.0)
        assert region_radius(Region(1, [[1, 1, 1]])) == 0.0
        assert region_radius(Region(1, CUBE_CORNERS)) == pytest.approx(math.sqrt(3) / 2)

    def test_empty_region_rejected(self):
        with pytest.raises(GeometryError):
            Region(1, np.zeros((0, 3)))
        with pytest.raises(GeometryError):
            region_centroid(np.zeros((0, 3)))

    @given(point_sets)
    def test_radius_nonnegative_zero_iff_identical(self, pts):
        r = region_radius(pts)
        assert r >= 0
        identical = np.all(pts == pts[0])
        assert (r == 0) == identical or (not identical and r < 1e-12)

    @given(point_sets, transforms())
    def test_centroid_equivariance(self, pts, T):
        lhs = region_centroid(T.apply(pts))
        rhs = T.apply(region_centroid(pts))
        assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(pts).max() + np.abs(T.translation).max()))

    @given(point_sets, finite)
    def test_mbr_ignores_z_translation(self, pts, dz):
        assert project_mbr(pts + [0, 0, dz]) == project_mbr(pts)


class TestProjection:
    def test_unit_cube(self):
        assert project_mbr(CUBE_CORNERS) == MBR2(0, 1, 0, 1)

    def test_single_point(self):
        assert project_mbr(np.array([[1.0, 2.0, 5.0]])) == MBR2(1, 1, 2, 2)

    def test_rotated_cube(self):
        corners = CUBE_CORNERS - 0.5
        rotated = RigidTransform.from_yaw(math.pi / 4).apply(corners)
        m = project_mbr(rotated)
        h = math.sqrt(2) / 2
        assert (m.x_lo, m.x_hi, m.y_lo, m.y_hi) == pytest.approx((-h, h, -h, h))


class TestTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, 1.1]))
        with pytest.raises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    @given(transforms())
    def test_inverse_roundtrip(self, T):
        p = np.array([[0.3, -1.0, 2.0]])
        assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-6)

    def test_matrix_roundtrip(self):
        T = RigidTransform.from_yaw(0.7, [1, 2, 3])
        assert np.allclose(RigidTransform.from_matrix(T.matrix).matrix, T.matrix)
        assert T.yaw == pytest.approx(0.7)


class TestRansac:
    def test_plane_with_outliers(self):
        rng = np.random.default_rng(0)
        plane_pts = np.column_stack([rng.uniform(-1, 1, (100, 2)), np.zeros(100)])
        outliers = np.column_stack([rng.uniform(-1, 1, (5, 2)), np.ones(5)])
        plane, inliers = ransac_plane(np.vstack([plane_pts, outliers]), inlier_threshold=0.01)
        assert abs(abs(plane.normal[2]) - 1) < 1e-9
        assert len(inliers) >= 100
        assert set(range(100)) <= set(inliers.tolist())

    def test_three_points(self):
        pts = np.array([[0, 0, 1.0], [1, 0, 1.0], [0, 1, 1.0]])
        plane, inliers = ransac_plane(pts)
        assert np.allclose(np.abs(plane.normal), [0, 0, 1])
        assert plane.distance(pts).max() < 1e-12
        assert len(inliers) == 3

    def test_larger_of_two_parallel_planes(self):
        rng = np.random.default_rng(1)
        big = np.column_stack([rng.uniform(0, 1, (80, 2)), np.zeros(80)])
        small = np.column_stack([rng.uniform(0, 1, (20, 2)), np.full(20, 0.5)])
        pts = np.vstack([big, small])
        plane, inliers = ransac_plane(pts, inlier_threshold=0.01)
        # counting oracle: the 80-point plane has the larger support
        counts = [int(np.sum(np.abs(pts[:, 2] - z) <= 0.01)) for z in (0.0, 0.5)]
        assert counts == [80, 20]
        assert len(inliers) == 80
        assert abs(plane.offset) < 1e-9

    def test_collinear_rejected(self):
        pts = np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)])
        with pytest.raises(GeometryError):
            ransac_plane(pts)


def brute_force_rect_area(pts2, steps=3600):
    best = np.inf
    for th in np.linspace(0, np.pi / 2, steps, endpoint=False):
        c, s = np.cos(th), np.sin(th)
        u = pts2 @ [c, s]
        v = pts2 @ [-s, c]
        best = min(best, (u.max() - u.min()) * (v.max() - v.min()))
    return best


class TestMinAreaRect:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_angle_sweep(self, seed):
        pts = np.random.default_rng(seed).normal(size=(25, 2)) * [2, 0.5]
        rect = min_area_rect(pts)
        assert rect.area <= brute_force_rect_area(pts) + 1e-9
        assert rect.area >= brute_force_rect_area(pts) * (1 - 1e-3)
        local = (pts - rect.center) @ rect.axes.T
        assert np.all(np.abs(local) <= rect.half_extents + 1e-9)


def brute_force_hull_volume(pts):
    """Sum of tetrahedra from an interior point to every supporting triangle."""
    c = pts.mean(axis=0)
    vol = 0.0
    seen = set()
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        if np.linalg.norm(n) < 1e-12:
            continue
        side = (pts - pts[i]) @ n
        if np.all(side <= 1e-9) or np.all(side >= -1e-9):
            coplanar = tuple(np.flatnonzero(np.abs(side) <= 1e-9))
            key = (coplanar, round(float(abs(n @ pts[i]) / np.linalg.norm(n)), 9))
            if len(coplanar) > 3:
                # triangulate the coplanar face once
                if key in seen:
                    continue
                seen.add(key)
                face = pts[list(coplanar)]
                nn = n / np.linalg.norm(n)
                basis = np.linalg.svd(np.vstack([nn, nn, nn]))[2][1:]
                p2 = (face - face.mean(0)) @ basis.T
                order = np.argsort(np.arctan2(p2[:, 1], p2[:, 0]))
                face = face[order]
                for m in range(1, len(face) - 1):
                    vol += abs(np.dot(face[0] - c, np.cross(face[m] - c, face[m + 1] - c))) / 6
            else:
                vol += abs(np.dot(pts[i] - c, np.cross(pts[j] - c, pts[k] - c))) / 6
    return vol


class TestOMBB:
    def test_axis_aligned_cube(self):
        pts = cube_surface()
        box = ombb_from_plane(pts, Plane(np.array([0.0, 0.0, 1.0]), 0.0))
        assert np.allclose(box.half_extents, 0.5)
        assert np.allclose(box.center, 0.5)
        assert not box.degenerate

    def test_rotated_cube(self):
        pts = cube_surface() - 0.5
        T = RigidTransform.from_yaw(math.radians(30))
        rot = T.apply(pts)
        box = ombb_from_plane(rot, Plane(np.array([0.0, 0.0, 1.0]), 0.5))
        assert np.allclose(np.sort(box.half_extents), 0.5, atol=1e-9)
        axis_aligned_volume = np.prod(rot.max(0) - rot.min(0))
        assert box.volume < axis_aligned_volume
        ang = math.degrees(math.atan2(box.axes[0, 1], box.axes[0, 0])) % 90
        assert ang == pytest.approx(30, abs=1e-6)

    def test_flat_plate(self):
        pts = cube_surface(size=(1, 1, 0.01))
        plane, _ = ransac_plane(pts, inlier_threshold=0.001)
        box = ombb_from_plane(pts, plane)
        assert box.volume <= 1.2 * 0.01

    def test_degenerate_projection_falls_back(self):
        pts = np.array([[0, 0, 0], [0, 0, 1.0], [0, 0, 2.0], [0, 0.0, 3]])
        box = ombb_from_plane(pts, Plane(np.array([1.0, 0, 0]), 0.0))
        assert box.degenerate

    @pytest.mark.parametrize("seed", range(20))
    def test_volume_covers_hull(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(12, 3)) * rng.uniform(0.2, 2, 3)
        plane, _ = ransac_plane(pts, inlier_threshold=0.05, rng=seed)
        box = ombb_from_plane(pts, plane)
        assert np.all(box.contains(pts, pad=1e-9))
        assert box.volume >= brute_force_hull_volume(pts) - 1e-9


def test_brute_force_hull_oracle_on_cube():
    assert brute_force_hull_volume(CUBE_CORNERS) == pytest.approx(1.0)


def test_align_to_ground():
    rng = np.random.default_rng(0)
    T = RigidTransform(np.linalg.qr(rng.normal(size=(3, 3)))[0] * [1, 1, 1], [0.1, 0.2, 0.3])
    if np.linalg.det(T.rotation) < 0:
        T = RigidTransform(T.rotation @ np.diag([1, 1, -1]), T.translation)
    floor = np.column_stack([rng.uniform(0, 1, (50, 2)), np.zeros(50)])
    tilted = T.apply(floor)
    n = T.rotation[:, 2]
    moved, _ = align_to_ground(tilted, Plane(n, float(-n @ T.translation)))
    assert np.abs(moved[:, 2]).max() < 1e-9
