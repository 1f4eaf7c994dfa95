"""Scene files: a JSON header plus one ``x y z label`` point file per view.

A header may instead carry a view's points inline under ``points_data``,
which lets a whole scene travel through a pipe.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GeometryError, LabeledPointCloud, Region, RigidTransform

FORMAT = "stacksupport-scene"
VERSION = 1


class SceneFileError(ValueError):
    pass


@dataclass
class SceneFile:
    views: list
    parameters: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def format_points(view: LabeledPointCloud) -> str:
    lines = []
    for r in view.regions:
        lab = int(r.label)
        for x, y, z in r.points:
            lines.append(f"{x:.9g} {y:.9g} {z:.9g} {lab}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_points(text: str, source: str = "<points>") -> dict:
    """Label -> (n, 3) array; raises with ``source:line`` diagnostics."""
    rows: dict = {}
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 4:
            raise SceneFileError(f"{source}:{no}: expected 'x y z label', got {len(parts)} fields")
        try:
            x, y, z = (float(v) for v in parts[:3])
            lab = int(parts[3])
        except ValueError:
            raise SceneFileError(f"{source}:{no}: malformed number in {s!r}") from None
        if lab < 0:
            raise SceneFileError(f"{source}:{no}: labels must be non-negative")
        if not all(np.isfinite((x, y, z))):
            raise SceneFileError(f"{source}:{no}: non-finite coordinate")
        rows.setdefault(lab, []).append((x, y, z))
    return {k: np.array(v, dtype=float) for k, v in rows.items()}


def _pose_rows(T: RigidTransform) -> list:
    return [[float(v) for v in row] for row in T.matrix]


def header_dict(scene: SceneFile, point_paths=None) -> dict:
    views = []
    for i, v in enumerate(scene.views):
        entry = {"id": v.view_id if isinstance(v.view_id, (int, str)) else i,
                 "pose": _pose_rows(v.view_pose)}
        if point_paths is None:
            entry["points_data"] = format_points(v)
        else:
            entry["points"] = point_paths[i]
        views.append(entry)
    doc = {"format": FORMAT, "version": VERSION, "parameters": dict(scene.parameters), "views": views}
    doc.update(scene.extra)
    return doc


def dumps_bundle(scene: SceneFile) -> str:
    return json.dumps(header_dict(scene), indent=1, sort_keys=True) + "\n"


def write_scene(scene: SceneFile, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, v in enumerate(scene.views):
        name = f"view_{i:02d}.xyz"
        (out / name).write_text(format_points(v))
        paths.append(name)
    header = out / "scene.json"
    header.write_text(json.dumps(header_dict(scene, paths), indent=1, sort_keys=True) + "\n")
    return header


def _view_from_entry(entry: dict, k: int, base: Path | None, source: str) -> LabeledPointCloud:
    try:
        pose = RigidTransform.from_matrix(np.array(entry["pose"], dtype=float))
    except KeyError:
        raise SceneFileError(f"{source}: view {k} has no pose") from None
    except (GeometryError, ValueError) as e:
        raise SceneFileError(f"{source}: view {k} pose is invalid: {e}") from None
    if "points_data" in entry:
        pts = parse_points(entry["points_data"], f"{source}[view {k}]")
    elif "points" in entry:
        if base is None:
            raise SceneFileError(f"{source}: view {k} refers to a point file but the header came from a stream")
        path = base / entry["points"]
        try:
            text = path.read_text()
        except OSError as e:
            raise SceneFileError(f"{path}: {e.strerror}") from None
        pts = parse_points(text, str(path))
    else:
        raise SceneFileError(f"{source}: view {k} has no points")
    regions = tuple(Region(l, p) for l, p in sorted(pts.items()))
    return LabeledPointCloud(regions, pose, entry.get("id", k))


def loads(text: str, base: Path | None = None, source: str = "<scene>") -> SceneFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFileError(f"{source}:{e.lineno}: invalid JSON header: {e.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SceneFileError(f"{source}: not a {FORMAT} file")
    views = doc.get("views")
    if not isinstance(views, list) or not views:
        raise SceneFileError(f"{source}: header lists no views")
    loaded = [_view_from_entry(e, k, base, source) for k, e in enumerate(views)]
    extra = {k: v for k, v in doc.items() if k not in ("format", "version", "parameters", "views")}
    return SceneFile(loaded, dict(doc.get("parameters", {})), extra)


def read_scene(path) -> SceneFile:
    """Read a header path, a directory holding ``scene.json``, or ``-`` for stdin."""
    if str(path) == "-":
        return loads(sys.stdin.read(), None, "<stdin>")
    p = Path(path)
    if p.is_dir():
        p = p / "scene.json"
    try:
        text = p.read_text()
    except OSError as e:
        raise SceneFileError(f"{p}: {e.strerror}") from None
    return loads(text, p.parent, str(p))
