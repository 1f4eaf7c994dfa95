import io
import json
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stacksupport import cli, synth
from stacksupport.geometry import LabeledPointCloud, Region, RigidTransform
from stacksupport.scenefile import (
    SceneFile,
    SceneFileError,
    dumps_bundle,
    format_points,
    loads,
    parse_points,
    read_scene,
    write_scene,
)
from stacksupport.synth import BoxSpec, ScenarioError, ScenarioSpec, ViewSpec


def run(argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    return cli.main(argv)


class TestSynth:
    def test_seed_determinism(self):
        a = synth.render(synth.random_two_view_scenario(3))
        b = synth.render(synth.random_two_view_scenario(3))
        for va, vb in zip(a.views, b.views):
            assert format_points(va) == format_points(vb)

    def test_different_seeds_differ(self):
        a = synth.render(synth.random_two_view_scenario(3)).views[0]
        b = synth.render(synth.random_two_view_scenario(4)).views[0]
        assert format_points(a) != format_points(b)

    def test_occlusion_reduces_rear_points(self):
        front = BoxSpec.on_ground(1, (0.2, 0.4, 0.15), (0.3, 0.0))
        rear = BoxSpec.on_ground(2, (0.2, 0.2, 0.3), (-0.1, 0.0))

        def rear_count(occ):
            spec = ScenarioSpec([front, rear], [ViewSpec(0.0, 20.0, 1.5, occlusion=occ)],
                                point_spacing=0.01, shuffle_labels=False)
            return len(synth.render(spec).views[0].region(2).points)

        assert rear_count(True) < rear_count(False)

    def test_overlap_rejected(self):
        a = BoxSpec.on_ground(1, (0.2, 0.2, 0.2), (0.0, 0.0))
        b = BoxSpec.on_ground(2, (0.2, 0.2, 0.2), (0.1, 0.0))
        with pytest.raises(ScenarioError, match="overlap"):
            synth.render(ScenarioSpec([a, b], [ViewSpec(0, 30, 1.5)]))

    def test_touching_is_not_overlap(self):
        a = BoxSpec.on_ground(1, (0.2, 0.2, 0.2), (0.0, 0.0))
        b = BoxSpec.on_ground(2, (0.2, 0.2, 0.2), (0.0, 0.0), z_bottom=0.2)
        assert not synth.boxes_overlap(a, b)

    def test_spec_round_trip(self):
        spec = synth.lean_scenario()
        assert ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_dict() == spec.to_dict()

    def test_stack_three_views(self, tmp_path):
        assert run(["gen", "--scenario", "stack", "--out", str(tmp_path)]) == 0
        assert sorted(p.name for p in tmp_path.glob("*.xyz")) == ["view_00.xyz", "view_01.xyz", "view_02.xyz"]

    def test_ground_truth_labels(self):
        sc = synth.render(synth.stack_scenario())
        views, _ = sc.truth_views()
        assert all(v.labels == [0, 1, 2] for v in views)


finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestSceneFile:
    @given(st.lists(st.tuples(finite, finite, finite, st.integers(0, 5)), min_size=1, max_size=30))
    @settings(max_examples=50)
    def test_nine_digit_round_trip(self, rows):
        rows = [(float(f"{x:.9g}"), float(f"{y:.9g}"), float(f"{z:.9g}"), l) for x, y, z, l in rows]
        groups: dict = {}
        for x, y, z, l in rows:
            groups.setdefault(l, []).append((x, y, z))
        view = LabeledPointCloud(tuple(Region(l, np.array(p)) for l, p in sorted(groups.items())),
                                 RigidTransform.identity(), 0)
        back = parse_points(format_points(view))
        for l, p in groups.items():
            assert np.array_equal(back[l], np.array(p))

    def test_directory_round_trip(self, tmp_path):
        sc = synth.render(synth.stack_scenario())
        scene = SceneFile(sc.views, {"mu": 0.4, "voxel_size": None, "density": 500.0})
        write_scene(scene, tmp_path)
        back = read_scene(tmp_path)
        assert back.parameters == scene.parameters
        for a, b in zip(scene.views, back.views):
            assert np.array_equal(a.view_pose.matrix, b.view_pose.matrix)
            assert format_points(a) == format_points(b)

    def test_bundle_round_trip(self):
        sc = synth.render(synth.stack_scenario())
        text = dumps_bundle(SceneFile(sc.views))
        back = loads(text)
        assert dumps_bundle(back) == text

    @pytest.mark.parametrize("line, msg", [
        ("1 2 3", "expected"),
        ("1 2 x 4", "malformed"),
        ("1 2 3 -1", "non-negative"),
        ("1 2 inf 1", "non-finite"),
    ])
    def test_line_diagnostics(self, line, msg):
        with pytest.raises(SceneFileError, match=rf"f\.xyz:2: .*{msg}"):
            parse_points("0 0 0 1\n" + line + "\n", "f.xyz")

    def test_bad_header(self):
        with pytest.raises(SceneFileError, match="invalid JSON"):
            loads("{nope")
        with pytest.raises(SceneFileError, match="not a"):
            loads("{}")

    def test_non_orthonormal_pose(self):
        doc = {"format": "stacksupport-scene", "views": [{"pose": np.diag([2, 1, 1, 1]).tolist(), "points_data": ""}]}
        with pytest.raises(SceneFileError, match="pose"):
            loads(json.dumps(doc))


def floating_bundle():
    box = BoxSpec(1, (0.2, 0.2, 0.2), (0.0, 0.0, 0.4))
    spec = ScenarioSpec([box], [ViewSpec(30.0, 35.0, 1.5)],
                        shuffle_labels=False, ground_margin=0.15)
    return dumps_bundle(SceneFile(synth.render(spec).views))


class TestCLI:
    def test_malformed_exit_one(self, tmp_path, capsys):
        sc = synth.render(synth.stack_scenario())
        write_scene(SceneFile(sc.views), tmp_path)
        (tmp_path / "view_01.xyz").write_text("0 0 0 1\n0.1 0.2 oops 1\n")
        assert run(["analyze", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "view_01.xyz:2:" in err

    def test_missing_file_exit_one(self, tmp_path, capsys):
        assert run(["analyze", str(tmp_path / "none.json")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_floating_box_exit_two(self, monkeypatch, capsys):
        assert run(["analyze", "--format", "json"], floating_bundle(), monkeypatch) == 2
        out = capsys.readouterr()
        assert json.loads(out.out)["stable"] is False
        assert "not explained" in out.err

    def test_stack_dot(self, monkeypatch, capsys):
        run(["gen", "--scenario", "stack", "--seed", "7"])
        bundle = capsys.readouterr().out
        assert run(["analyze"], bundle, monkeypatch) == 0
        dot = capsys.readouterr().out
        assert '"ground" -> "1";' in dot or '"ground" -> "2";' in dot
        edges = [l for l in dot.splitlines() if "->" in l]
        assert len(edges) == 2
        assert edges == sorted(edges)

    def test_lean_frictionless_unstable(self, tmp_path, capsys):
        run(["gen", "--scenario", "lean", "--out", str(tmp_path)])
        assert run(["analyze", str(tmp_path), "--mu", "0", "--format", "json"]) == 2
        assert json.loads(capsys.readouterr().out)["stable"] is False

    def test_match_json(self, tmp_path, capsys):
        run(["gen", "--scenario", "random", "--seed", "2", "--out", str(tmp_path)])
        capsys.readouterr()
        assert run(["match", str(tmp_path), "0", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert {"pairs", "score"} <= set(doc)
        assert run(["match", str(tmp_path), "0", "9"]) == 1

    def test_register_json_and_outputs(self, tmp_path, capsys):
        run(["gen", "--scenario", "stack", "--out", str(tmp_path / "s")])
        assert run(["register", str(tmp_path / "s"), "--format", "json", "--out", str(tmp_path / "r")]) == 0
        out = capsys.readouterr().out
        doc = json.loads(out)
        assert len(doc) == 2
        assert all(np.isfinite(d["mse"]) for d in doc)
        assert (tmp_path / "r" / "fused.xyz").stat().st_size > 0
        assert (tmp_path / "r" / "registration.txt").read_text() == out

    def test_certificates(self, tmp_path, capsys):
        run(["gen", "--scenario", "stack", "--views", "1", "--out", str(tmp_path)])
        cert = tmp_path / "cert.csv"
        assert run(["analyze", str(tmp_path), "--certificates", str(cert)]) == 0
        assert cert.read_text().startswith("supporter,supported")
