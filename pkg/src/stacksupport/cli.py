"""Command-line driver: ``gen``, ``match``, ``register`` and ``analyze``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline, stability, synth
from .geometry import LabeledPointCloud, Region
from .matching import MatchingError, estimate_initial_transform, match_to_json, match_views
from .registration import RegistrationError
from .scenefile import SceneFile, SceneFileError, dumps_bundle, format_points, read_scene, write_scene
from .volume import VolumeError

log = logging.getLogger("stacksupport")

EXIT_OK, EXIT_INPUT, EXIT_UNEXPLAINED = 0, 1, 2
LOG_ENV = "STACKSUPPORT_LOG_LEVEL"

SCENARIOS = {
    "stack": lambda a: synth.stack_scenario(a.seed, a.views or 3),
    "cantilever": lambda a: synth.cantilever_scenario(a.seed, a.views or 4),
    "lean": lambda a: synth.lean_scenario(a.seed, a.views or 4),
    "random": lambda a: synth.random_two_view_scenario(a.seed),
}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    spec = SCENARIOS[args.scenario](args)
    if args.noise is not None:
        spec.noise_sigma = args.noise
    if args.no_occlusion:
        for v in spec.views:
            v.occlusion = False
    for name in ("voxel_size", "mu", "density"):
        if getattr(args, name) is not None:
            setattr(spec, name, getattr(args, name))
    rendered = synth.render(spec)
    params = {"voxel_size": spec.voxel_size, "mu": spec.mu, "density": spec.density}
    truth = {"scene_to_view": [T.matrix.tolist() for T in rendered.scene_to_view],
             "labels": [{str(k): v for k, v in sorted(m.items())} for m in rendered.label_truth]}
    scene = SceneFile(rendered.views, params, {"scenario": spec.to_dict(), "truth": truth})
    if args.out:
        path = write_scene(scene, args.out)
        log.info("wrote %s", path)
    else:
        sys.stdout.write(dumps_bundle(scene))
    return EXIT_OK


def _param(args, scene: SceneFile, name: str, default):
    v = getattr(args, name, None)
    if v is not None:
        return v
    v = scene.parameters.get(name)
    return default if v is None else v


def cmd_match(args) -> int:
    scene = read_scene(args.scene)
    ids = [str(v.view_id) for v in scene.views]
    for x in (args.view_a, args.view_b):
        if x not in ids:
            raise SceneFileError(f"unknown view id {x!r}; available: {', '.join(ids)}")
    a, b = (scene.views[ids.index(x)] for x in (args.view_a, args.view_b))
    a, b = pipeline.objects_only(a), pipeline.objects_only(b)
    m = match_views(a, b)
    g = estimate_initial_transform(m, a, b)
    _emit(match_to_json(m, g) + "\n", args.out)
    return EXIT_OK


def cmd_register(args) -> int:
    scene = read_scene(args.scene)
    regs = pipeline.register_views(scene.views)
    rows = [f"{'view':>6} {'ref':>4} {'pairs':>5} {'seed_yaw':>9} {'yaw':>9} {'mse':>12} {'iters':>5}"]
    for r in regs:
        rows.append(f"{str(r.view):>6} {str(scene.views[0].view_id):>4} {len(r.match.pairs):>5} "
                    f"{math.degrees(r.guess.yaw):9.3f} {math.degrees(r.result.transform.yaw):9.3f} "
                    f"{r.result.mse:12.6e} {r.result.iterations:>5}")
    report = "\n".join(rows) + "\n"
    if args.format == "json":
        report = json.dumps([{"view": r.view, "pairs": [list(p) for p in r.match.pairs],
                              "transform": r.result.transform.matrix.tolist(), "mse": r.result.mse,
                              "iterations": r.result.iterations} for r in regs], indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fused = pipeline.canonical_views(scene.views, regs)
        merged: dict = {}
        for v in fused:
            for reg in v.regions:
                merged.setdefault(reg.label, []).append(reg.points)
        cloud = LabeledPointCloud(tuple(Region(l, np.vstack(p)) for l, p in sorted(merged.items())),
                                  scene.views[0].view_pose, "fused")
        (out / "fused.xyz").write_text(format_points(cloud))
        (out / "registration.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_analyze(args) -> int:
    scene = read_scene(args.scene)
    voxel = _param(args, scene, "voxel_size", None)
    mu = _param(args, scene, "mu", stability.DEFAULT_MU)
    density = _param(args, scene, "density", stability.DEFAULT_DENSITY)
    result, regs = pipeline.full_pipeline(scene.views, voxel, mu, density)
    an = result.analysis
    if args.certificates and an.result.forces is not None:
        Path(args.certificates).write_text(stability.certificate_csv(an.problem, an.result.forces))
    if an.graph is None:
        sys.stderr.write(f"scene not explained (relaxation tried: {', '.join(an.relaxation) or 'none'})\n")
        if args.format == "json":
            _emit(json.dumps({"stable": False, "relaxation": an.relaxation}, indent=2) + "\n", args.out)
        return EXIT_UNEXPLAINED
    if args.format == "dot":
        _emit(an.graph.to_dot(), args.out)
    else:
        doc = an.graph.to_dict()
        doc["stable"] = True
        doc["relaxation"] = an.relaxation
        doc["mu"] = an.problem.mu
        doc["objects"] = {stability.node_name(b.label): {"mass": round(b.mass, 9),
                                                     "core_supporters": [stability.node_name(s) for s in an.graph.supporters(b.label)]}
                          for b in an.problem.bodies}
        _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stacksupport", description="Support relations of stacked objects from labeled multi-view point clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic scene")
    g.add_argument("--scenario", choices=sorted(SCENARIOS), default="stack")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--views", type=int, default=None)
    g.add_argument("--noise", type=float, default=None, help="point noise sigma in scene units")
    g.add_argument("--no-occlusion", action="store_true")
    g.add_argument("--out", help="output directory; a single bundle goes to stdout when omitted")
    for name in ("--voxel-size", "--mu", "--density"):
        g.add_argument(name, type=float, default=None)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("match", help="match objects between two views")
    m.add_argument("scene", help="scene.json, its directory, or - for stdin")
    m.add_argument("view_a")
    m.add_argument("view_b")
    m.add_argument("--out")
    m.add_argument("--format", choices=["json"], default="json")
    m.set_defaults(func=cmd_match)

    r = sub.add_parser("register", help="register every view onto the first")
    r.add_argument("scene")
    r.add_argument("--out", help="directory for the fused cloud and report")
    r.add_argument("--format", choices=["table", "json"], default="table")
    r.set_defaults(func=cmd_register)

    a = sub.add_parser("analyze", help="support graph of a scene")
    a.add_argument("scene", nargs="?", default="-", help="scene.json, its directory, or - for stdin (default)")
    a.add_argument("--voxel-size", type=float, default=None)
    a.add_argument("--mu", type=float, default=None)
    a.add_argument("--density", type=float, default=None)
    a.add_argument("--format", choices=["json", "dot"], default="dot")
    a.add_argument("--out")
    a.add_argument("--certificates", help="CSV file for the force certificate")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    level = logging.getLevelName(os.environ.get(LOG_ENV, "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SceneFileError, synth.ScenarioError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT
    except (MatchingError, RegistrationError, VolumeError, stability.StabilityError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
