import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import voxelize
from stacksupport import synth
from stacksupport.synth import BoxSpec, ScenarioSpec, ViewSpec
from stacksupport.volume import (
    FREE,
    GROUND,
    HIDDEN,
    VolumeError,
    VoxelScene,
    carve,
    complete_all,
    complete_object,
    contact_graph,
    contact_region,
    default_voxel_size,
    from_bytes,
    to_bytes,
)


def single_box_render(azimuths, size=(0.3, 0.2, 0.25), yaw=20.0):
    box = BoxSpec.on_ground(1, size, (0.0, 0.0), yaw)
    spec = ScenarioSpec([box], [ViewSpec(a, 35.0, 1.5) for a in azimuths],
                        point_spacing=0.008, shuffle_labels=False)
    views, transforms = synth.render(spec).truth_views()
    return box, views, transforms


def occluded_render(azimuths, yaw=20.0):
    # a low block in front of the target hides the lower part of its near side
    target = BoxSpec.on_ground(1, (0.3, 0.2, 0.25), (0.0, 0.0), yaw)
    block = BoxSpec.on_ground(2, (0.12, 0.5, 0.2), (0.32, 0.0))
    spec = ScenarioSpec([target, block], [ViewSpec(a, 35.0, 1.5) for a in azimuths],
                        point_spacing=0.008, shuffle_labels=False)
    views, transforms = synth.render(spec).truth_views()
    return target, views, transforms


VS = 0.02


@pytest.fixture(scope="module")
def one_view():
    box, views, T = single_box_render([30.0])
    return box, carve(views, T, VS)


@pytest.fixture(scope="module")
def two_views():
    box, views, T = single_box_render([30.0, 210.0])
    return box, carve(views, T, VS)


class TestCarve:
    def test_states_partition(self, one_view):
        _, s = one_view
        g = s.grid
        assert np.all((g == FREE) | (g == HIDDEN) | (g > 0))

    def test_interior_hidden_from_one_view(self, one_view):
        box, s = one_view
        i, j, k = s.index_of(np.asarray(box.center)[None])[0]
        assert s.grid[i, j, k] == HIDDEN

    def test_camera_side_free(self, one_view):
        box, s = one_view
        eye = synth.camera_position(ScenarioSpec([box], [ViewSpec(30.0, 35.0, 1.5)]), ViewSpec(30.0, 35.0, 1.5))
        # a point between the camera and the box, inside the grid
        p = np.asarray(box.center) + 0.3 * (eye - np.asarray(box.center)) / np.linalg.norm(eye - box.center)
        if np.all((p > s.origin) & (p < s.origin + np.array(s.shape) * VS)):
            i, j, k = s.index_of(p[None])[0]
            assert s.grid[i, j, k] == FREE

    def test_opposing_views_shrink_hidden_set(self, one_view, two_views):
        box, views, T = single_box_render([210.0])
        other = carve(views, T, VS)
        both = two_views[1]
        # compare on the same physical box: count hidden voxels within the padded box
        def hidden_near_box(s):
            idx = s.voxels(HIDDEN)
            return int(np.count_nonzero(box.contains(s.centers(idx), pad=0.1)))
        assert hidden_near_box(both) < hidden_near_box(one_view[1])
        assert hidden_near_box(both) < hidden_near_box(other)

    def test_occupied_voxels_hold_points(self, two_views):
        _, s = two_views
        for l in s.labels:
            hit = set(map(tuple, s.index_of(s.points[l])))
            assert set(map(tuple, s.voxels(l))) <= hit

    def test_ground_points_do_not_occupy(self):
        spec = synth.stack_scenario()
        views, T = synth.render(spec).truth_views()
        s = carve(views, T)
        assert GROUND not in s.labels
        assert s.labels == [1, 2]

    def test_errors(self):
        with pytest.raises(VolumeError):
            carve([])
        _, views, T = single_box_render([0.0])
        with pytest.raises(VolumeError):
            carve(views, T + T)
        with pytest.raises(VolumeError):
            carve(views, T, voxel_size=0.0)

    def test_default_voxel_size(self):
        pts = np.array([[0, 0, 0], [0.64, 0, 0]], float)
        assert default_voxel_size(pts) == pytest.approx(0.01)


class TestCompletion:
    def test_single_view_within_quarter(self, one_view):
        box, s = one_view
        done = complete_object(s, 1)
        assert abs(done.volume(1) - box.volume) / box.volume <= 0.25

    def test_two_views_closer_when_partly_occluded(self):
        errs = []
        for az in ([30.0], [30.0, 210.0]):
            box, views, T = occluded_render(az)
            s = complete_all(carve(views, T))
            errs.append(abs(s.estimated_volume(1) - box.volume))
        assert errs[1] < errs[0]

    def test_estimated_volume_removes_shell(self):
        # a 10x10x10 voxel cube surrounded by free space: 488 voxels face outwards
        grid = np.full((12, 12, 12), FREE, np.int32)
        grid[1:11, 1:11, 1:11] = 1
        s = VoxelScene(0.1, np.zeros(3), grid, {})
        assert s.volume(1) == pytest.approx(1.0)
        assert s.estimated_volume(1) == pytest.approx((1000 - 0.5 * (1000 - 512)) * 1e-3)

    def test_monotone(self, one_view):
        _, s = one_view
        done = complete_object(s, 1)
        assert np.all((done.grid == s.grid) | ((s.grid == HIDDEN) & (done.grid == 1)))
        assert done.count(FREE) == s.count(FREE)
        assert done.volume(1) >= s.volume(1)

    def test_fully_visible_unchanged(self):
        s = voxelize([BoxSpec(1, (0.2, 0.2, 0.2), (0.2, 0.2, 0.1))], 0.04, (10, 10, 8))
        done = complete_object(s, 1)
        assert np.array_equal(done.grid, s.grid)

    def test_overlap_goes_to_larger(self):
        # two boxes whose surface points lie on either side of a hidden slab
        big = BoxSpec(1, (0.4, 0.4, 0.4), (0.2, 0.2, 0.2))
        small = BoxSpec(2, (0.2, 0.4, 0.4), (0.5, 0.2, 0.2))
        s = voxelize([big, small], 0.04, (20, 12, 12))
        slab = (s.grid == 1) & (np.indices(s.shape)[0] >= 8)
        s.grid[slab] = HIDDEN
        s.grid[(s.grid == 2) & (np.indices(s.shape)[0] <= 11)] = HIDDEN
        done = complete_all(s)
        assert np.all(done.grid[slab] == 1)
        assert done.count(HIDDEN) + done.count(1) + done.count(2) + done.count(FREE) == done.grid.size

    def test_missing_label(self, one_view):
        with pytest.raises(VolumeError):
            complete_object(one_view[1], 5)


def unit_stack(vs=0.1):
    a = BoxSpec(1, (1.0, 1.0, 1.0), (0.5, 0.5, 0.5))
    b = BoxSpec(2, (1.0, 1.0, 1.0), (0.5, 0.5, 1.5))
    return voxelize([a, b], vs, (10, 10, 20))


class TestContacts:
    def test_box_on_ground(self):
        s = voxelize([BoxSpec(1, (0.2, 0.2, 0.2), (0.2, 0.2, 0.1))], 0.04, (10, 10, 8))
        g = contact_graph(s)
        assert g.edge_set() == {(GROUND, 1)}
        assert np.allclose(g.edges[(GROUND, 1)].normal, [0, 0, 1])

    def test_separated_boxes(self):
        a = BoxSpec(1, (0.2, 0.2, 0.2), (0.1, 0.1, 0.1))
        b = BoxSpec(2, (0.2, 0.2, 0.2), (0.4, 0.1, 0.1))
        g = contact_graph(voxelize([a, b], 0.04, (14, 6, 6)))
        assert not g.has_edge(1, 2)

    def test_stack_edges_exact(self):
        g = contact_graph(unit_stack())
        assert g.edge_set() == {(GROUND, 1), (1, 2)}
        assert g.neighbors(1) == [GROUND, 2]

    def test_full_face_rectangle(self):
        s = unit_stack()
        r = contact_region(s, 1, 2)
        assert np.allclose(r.normal, [0, 0, 1], atol=1e-9)
        corners = {(0, 0), (1, 0), (1, 1), (0, 1)}
        for p in r.contact_points:
            assert abs(p[2] - 1.0) <= s.voxel_size
            assert min(math.dist(p[:2], c) for c in corners) <= s.voxel_size
        assert not r.degenerate

    def test_normal_points_from_a_to_b(self):
        r = contact_region(unit_stack(), 2, 1)
        assert r.normal[2] == pytest.approx(-1.0)

    def test_edge_contact_thin(self):
        vs = 0.02
        a = BoxSpec(1, (0.4, 0.4, 0.2), (0.3, 0.3, 0.1))
        h = 0.1 * math.sqrt(2)
        b = BoxSpec(2, (0.3, 0.2, 0.2), (0.3, 0.3, 0.2 + h), roll=45.0)
        s = voxelize([a, b], vs, (30, 30, 25))
        r = contact_region(s, 1, 2)
        p = r.contact_points
        sides = sorted([np.linalg.norm(p[1] - p[0]), np.linalg.norm(p[2] - p[1])])
        assert sides[0] <= 2 * vs + 1e-9
        assert sides[1] > 0.2

    def test_rectangle_shape(self):
        r = contact_region(unit_stack(), 1, 2)
        p = r.contact_points
        e = [p[(i + 1) % 4] - p[i] for i in range(4)]
        assert abs(e[0] @ e[1]) < 1e-9
        assert np.all(np.abs((p - p.mean(0)) @ r.normal) <= 0.1 / 4)

    def test_degenerate_point_contact(self):
        grid = np.full((4, 4, 4), FREE, np.int32)
        grid[0, 0, 0] = 1
        grid[1, 1, 1] = 2
        s = VoxelScene(0.1, np.zeros(3), grid, {})
        r = contact_region(s, 1, 2)
        assert r.degenerate
        assert np.allclose(r.normal, np.ones(3) / math.sqrt(3))
        assert np.allclose(r.contact_points, r.contact_points[0])
        grown = r.grown(0.2)
        assert np.linalg.norm(grown.contact_points[0] - grown.contact_points[2]) == pytest.approx(0.2 * math.sqrt(2))

    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 3),
                              st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
                    min_size=2, max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_graph_matches_brute_force(self, blocks):
        grid = np.full((10, 10, 7), FREE, np.int32)
        for lab, (x, y, z, dx, dy, dz) in enumerate(blocks, 1):
            grid[x:x + dx, y:y + dy, z:z + dz] = lab
        s = VoxelScene(0.1, np.zeros(3), grid, {})
        labels = s.labels
        g = contact_graph(s, with_regions=False)
        expected = set()
        for i, a in enumerate(labels):
            ca = s.centers(s.voxels(a))
            if ca[:, 2].min() < 0.1:
                expected.add((GROUND, a))
            for b in labels[i + 1:]:
                cb = s.centers(s.voxels(b))
                dmin = np.sqrt(((ca[:, None] - cb[None]) ** 2).sum(-1)).min()
                if dmin < 2 * s.voxel_size:
                    expected.add((a, b))
        assert g.edge_set() == expected
        assert all(a < b for a, b in g.edges)


class TestSerialization:
    def test_round_trip(self, two_views):
        s = complete_all(two_views[1])
        back = from_bytes(to_bytes(s))
        assert np.array_equal(back.grid, s.grid)
        assert back.voxel_size == s.voxel_size
        assert np.array_equal(back.origin, s.origin)

    def test_rejects_garbage(self, two_views):
        with pytest.raises(VolumeError):
            from_bytes(b"nope")
        data = to_bytes(two_views[1])
        with pytest.raises(VolumeError):
            from_bytes(data[:-8])
