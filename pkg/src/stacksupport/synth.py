"""Synthetic stacked-box scenes rendered as labeled multi-view point clouds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import LabeledPointCloud, Region, RigidTransform, rot_z


class ScenarioError(ValueError):
    pass


def _rotation(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    Rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


@dataclass
class BoxSpec:
    """A box primitive; ``center`` is its centroid in the scene frame.

    Angles are in degrees. Cylinders are approximated by boxes upstream.
    """

    label: int
    size: tuple
    center: tuple
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    @classmethod
    def on_ground(cls, label, size, xy, yaw=0.0, z_bottom=0.0):
        return cls(label, tuple(size), (xy[0], xy[1], z_bottom + size[2] / 2), yaw)

    @property
    def rotation(self) -> np.ndarray:
        return _rotation(math.radians(self.yaw), math.radians(self.pitch), math.radians(self.roll))

    @property
    def half(self) -> np.ndarray:
        return np.asarray(self.size, dtype=float) / 2

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def corners(self) -> np.ndarray:
        s = np.array([[a, b, c] for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)], float)
        return (s * self.half) @ self.rotation.T + np.asarray(self.center, float)

    def contains(self, pts, pad=0.0) -> np.ndarray:
        local = (np.asarray(pts) - np.asarray(self.center, float)) @ self.rotation
        return np.all(np.abs(local) <= self.half + pad, axis=-1)

    def to_dict(self) -> dict:
        return {"label": self.label, "size": list(self.size), "center": list(self.center),
                "yaw": self.yaw, "pitch": self.pitch, "roll": self.roll}

    @classmethod
    def from_dict(cls, d) -> "BoxSpec":
        return cls(int(d["label"]), tuple(d["size"]), tuple(d["center"]),
                   d.get("yaw", 0.0), d.get("pitch", 0.0), d.get("roll", 0.0))


@dataclass
class ViewSpec:
    """Camera on a circle around the scene.

    ``frame_yaw`` (degrees) and ``frame_offset`` define the ground-aligned
    frame the view's points are written in; by default the frame follows the
    camera azimuth, as a camera-centred capture would.
    """

    azimuth: float
    elevation: float = 30.0
    distance: float = 2.0
    frame_yaw: float | None = None
    frame_offset: tuple = (0.0, 0.0)
    occlusion: bool = True

    def to_dict(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation, "distance": self.distance,
                "frame_yaw": self.frame_yaw, "frame_offset": list(self.frame_offset),
                "occlusion": self.occlusion}

    @classmethod
    def from_dict(cls, d) -> "ViewSpec":
        return cls(d["azimuth"], d.get("elevation", 30.0), d.get("distance", 2.0),
                   d.get("frame_yaw"), tuple(d.get("frame_offset", (0.0, 0.0))), d.get("occlusion", True))


@dataclass
class ScenarioSpec:
    boxes: list
    views: list
    noise_sigma: float = 0.0
    point_spacing: float = 0.01
    seed: int = 0
    shuffle_labels: bool = True
    voxel_size: float | None = None
    mu: float = 0.5
    density: float = 1000.0
    # ground samples (label 0) within this margin around the boxes; None disables them
    ground_margin: float | None = None

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self.boxes], "views": [v.to_dict() for v in self.views],
                "noise_sigma": self.noise_sigma, "point_spacing": self.point_spacing, "seed": self.seed,
                "shuffle_labels": self.shuffle_labels, "voxel_size": self.voxel_size,
                "mu": self.mu, "density": self.density, "ground_margin": self.ground_margin}

    @classmethod
    def from_dict(cls, d) -> "ScenarioSpec":
        return cls([BoxSpec.from_dict(b) for b in d["boxes"]], [ViewSpec.from_dict(v) for v in d["views"]],
                   d.get("noise_sigma", 0.0), d.get("point_spacing", 0.01), d.get("seed", 0),
                   d.get("shuffle_labels", True), d.get("voxel_size"), d.get("mu", 0.5),
                   d.get("density", 1000.0), d.get("ground_margin"))

    @property
    def center(self) -> np.ndarray:
        c = np.mean([b.center for b in self.boxes], axis=0)
        return np.array([c[0], c[1], 0.0])

    @property
    def diameter(self) -> float:
        pts = np.vstack([b.corners() for b in self.boxes])
        return float(np.linalg.norm(pts.max(0) - pts.min(0)))


def boxes_overlap(a: BoxSpec, b: BoxSpec, tol: float = 1e-9) -> bool:
    """Separating-axis test; touching faces do not count as overlap."""
    Ra, Rb = a.rotation, b.rotation
    axes = [Ra[:, i] for i in range(3)] + [Rb[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(Ra[:, i], Rb[:, j])
            if np.linalg.norm(c) > 1e-9:
                axes.append(c / np.linalg.norm(c))
    d = np.asarray(b.center, float) - np.asarray(a.center, float)
    for ax in axes:
        ra = np.sum(a.half * np.abs(Ra.T @ ax))
        rb = np.sum(b.half * np.abs(Rb.T @ ax))
        if abs(d @ ax) >= ra + rb - tol:
            return False
    return True


def validate(spec: ScenarioSpec) -> None:
    labels = [b.label for b in spec.boxes]
    if len(set(labels)) != len(labels):
        raise ScenarioError("box labels must be unique")
    if any(l <= 0 for l in labels):
        raise ScenarioError("box labels must be positive; 0 is the ground")
    for b in spec.boxes:
        if min(b.size) <= 0:
            raise ScenarioError(f"box {b.label} has non-positive size")
        if b.corners()[:, 2].min() < -1e-9:
            raise ScenarioError(f"box {b.label} penetrates the ground")
    for i, a in enumerate(spec.boxes):
        for b in spec.boxes[i + 1:]:
            if boxes_overlap(a, b):
                raise ScenarioError(f"boxes {a.label} and {b.label} overlap")
    if not spec.views:
        raise ScenarioError("at least one view is required")


def sample_box_surface(box: BoxSpec, spacing: float):
    """Face-centred grid samples; returns points and their outward normals (world frame)."""
    pts, normals = [], []
    h = box.half
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        nu = max(1, int(math.ceil(2 * h[u_ax] / spacing)))
        nv = max(1, int(math.ceil(2 * h[v_ax] / spacing)))
        u = (np.arange(nu) + 0.5) / nu * 2 * h[u_ax] - h[u_ax]
        v = (np.arange(nv) + 0.5) / nv * 2 * h[v_ax] - h[v_ax]
        uu, vv = np.meshgrid(u, v)
        for side in (-1.0, 1.0):
            p = np.zeros((uu.size, 3))
            p[:, axis] = side * h[axis]
            p[:, u_ax] = uu.ravel()
            p[:, v_ax] = vv.ravel()
            n = np.zeros(3)
            n[axis] = side
            pts.append(p)
            normals.append(np.tile(n, (len(p), 1)))
    R = box.rotation
    return np.vstack(pts) @ R.T + np.asarray(box.center, float), np.vstack(normals) @ R.T


def sample_ground(spec: ScenarioSpec):
    """Grid samples of the ground plane around the boxes, minus the box footprints."""
    corners = np.vstack([b.corners() for b in spec.boxes])
    lo = corners[:, :2].min(axis=0) - spec.ground_margin
    hi = corners[:, :2].max(axis=0) + spec.ground_margin
    step = 2 * spec.point_spacing
    xs = np.arange(lo[0], hi[0], step) + step / 2
    ys = np.arange(lo[1], hi[1], step) + step / 2
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    keep = np.ones(len(pts), bool)
    for b in spec.boxes:
        keep &= ~b.contains(pts, pad=1e-9)
    pts = pts[keep]
    return pts, np.tile([0.0, 0.0, 1.0], (len(pts), 1))


def ray_box_entry(origin: np.ndarray, targets: np.ndarray, box: BoxSpec) -> np.ndarray:
    """Parametric entry ``t`` of segments ``origin -> targets`` into ``box`` (inf if missed)."""
    R = box.rotation
    o = (origin - np.asarray(box.center, float)) @ R
    d = (targets - np.asarray(box.center, float)) @ R - o
    h = box.half
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    t_lo = np.where(d == 0, np.where(np.abs(o) <= h, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(d == 0, np.where(np.abs(o) <= h, np.inf, -np.inf), np.maximum(t1, t2))
    enter = t_lo.max(axis=1)
    leave = t_hi.min(axis=1)
    hit = (enter <= leave) & (leave >= 0)
    return np.where(hit, np.maximum(enter, 0.0), np.inf)


def camera_position(spec: ScenarioSpec, view: ViewSpec) -> np.ndarray:
    az, el = math.radians(view.azimuth), math.radians(view.elevation)
    top = max(b.corners()[:, 2].max() for b in spec.boxes)
    target = spec.center + [0.0, 0.0, top / 2]
    return target + view.distance * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera axes as columns (right, up, backward) with determinant +1."""
    back = eye - target
    back /= np.linalg.norm(back)
    right = np.cross([0.0, 0.0, 1.0], back)
    if np.linalg.norm(right) < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(back, right)
    return np.column_stack([right, up, back])


def view_frame(spec: ScenarioSpec, view: ViewSpec) -> RigidTransform:
    """Scene frame -> frame the view's points are expressed in."""
    yaw = view.frame_yaw if view.frame_yaw is not None else -(view.azimuth - 90.0)
    R = rot_z(math.radians(yaw))
    off = np.array([view.frame_offset[0], view.frame_offset[1], 0.0])
    return RigidTransform(R, off - R @ spec.center)


def render_view(spec: ScenarioSpec, view: ViewSpec, view_id, rng: np.random.Generator,
                label_map: dict | None = None) -> tuple[LabeledPointCloud, RigidTransform]:
    """Points visible from ``view``, written in the view's own frame.

    Returns the cloud and the scene->view transform.
    """
    eye = camera_position(spec, view)
    regions = []
    surfaces = [(box.label, *sample_box_surface(box, spec.point_spacing)) for box in spec.boxes]
    if spec.ground_margin is not None:
        surfaces.append((0, *sample_ground(spec)))
    for label0, pts, normals in surfaces:
        box = next((b for b in spec.boxes if b.label == label0), None)
        if view.occlusion:
            front = np.einsum("ij,ij->i", eye - pts, normals) > 1e-12
            pts = pts[front]
            visible = np.ones(len(pts), bool)
            for other in spec.boxes:
                if other is box or not len(pts):
                    continue
                visible &= ray_box_entry(eye, pts, other) >= 1.0 - 1e-9
            pts = pts[visible]
        if box is not None and view.occlusion:
            pts = pts[pts[:, 2] > 1e-9]
        if not len(pts):
            continue
        if spec.noise_sigma > 0:
            pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
        label = 0 if box is None else (label_map[box.label] if label_map else box.label)
        regions.append((label, pts))
    T = view_frame(spec, view)
    regions.sort(key=lambda r: r[0])
    cloud = LabeledPointCloud(tuple(Region(l, T.apply(p)) for l, p in regions),
                              RigidTransform(T.rotation @ look_at(eye, spec.center), T.apply(eye)),
                              view_id)
    return cloud, T


@dataclass
class RenderedScene:
    spec: ScenarioSpec
    views: list
    scene_to_view: list
    # per view: view label -> true box label
    label_truth: list = field(default_factory=list)

    def truth_views(self) -> tuple[list, list]:
        """Views relabelled to box labels, with transforms mapping each into the scene frame."""
        out = []
        for v, truth in zip(self.views, self.label_truth):
            regs = tuple(Region(truth.get(r.label, r.label) if r.label else 0, r.points) for r in v.regions)
            out.append(LabeledPointCloud(tuple(sorted(regs, key=lambda r: r.label)), v.view_pose, v.view_id))
        return out, [T.inverse() for T in self.scene_to_view]


def render(spec: ScenarioSpec) -> RenderedScene:
    validate(spec)
    rng = np.random.default_rng(spec.seed)
    views, frames, truth = [], [], []
    true_labels = [b.label for b in spec.boxes]
    for i, view in enumerate(spec.views):
        if spec.shuffle_labels:
            perm = rng.permutation(len(true_labels)) + 1
            label_map = {t: int(p) for t, p in zip(true_labels, perm)}
        else:
            label_map = {t: t for t in true_labels}
        cloud, T = render_view(spec, view, i, rng, label_map)
        views.append(cloud)
        frames.append(T)
        truth.append({v: t for t, v in label_map.items()})
    return RenderedScene(spec, views, frames, truth)


def random_boxes(rng: np.random.Generator, n: int, extent: float = 1.0,
                 size_range=(0.12, 0.3), max_tries: int = 2000) -> list:
    boxes = []
    tries = 0
    while len(boxes) < n:
        tries += 1
        if tries > max_tries:
            raise ScenarioError("could not place boxes without overlap")
        size = tuple(rng.uniform(*size_range, 3).round(4))
        xy = rng.uniform(-extent / 2, extent / 2, 2).round(4)
        cand = BoxSpec.on_ground(len(boxes) + 1, size, xy, round(float(rng.uniform(0, 90)), 2))
        # keep a clear gap so boxes stay distinct objects
        grown = BoxSpec(0, tuple(np.asarray(size) + 0.04), cand.center, cand.yaw)
        if any(boxes_overlap(grown, b) for b in boxes):
            continue
        boxes.append(cand)
    return boxes


def random_two_view_scenario(seed: int, n_boxes: int | None = None, yaw_deg: float | None = None,
                             noise: float = 0.02, occlusion_view: int | None = 1,
                             yaw_range=(0.0, 360.0)) -> ScenarioSpec:
    """Two views related by a random yaw; noise is a fraction of the mean box edge."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7)) if n_boxes is None else n_boxes
    boxes = random_boxes(rng, n)
    yaw = float(rng.uniform(*yaw_range)) if yaw_deg is None else yaw_deg
    az0 = float(rng.uniform(0, 360))
    mean_edge = float(np.mean([b.size for b in boxes]))
    views = [ViewSpec(az0, 35.0, 2.5, occlusion=(occlusion_view == 0)),
             ViewSpec(az0 + yaw, 35.0, 2.5, frame_offset=tuple(rng.uniform(-0.3, 0.3, 2)),
                      occlusion=(occlusion_view == 1))]
    return ScenarioSpec(boxes, views, noise_sigma=noise * mean_edge, point_spacing=0.015, seed=seed)


def _ring(n_views: int, start: float = 30.0, elevation: float = 35.0, distance: float = 1.6) -> list:
    return [ViewSpec(start + k * 360.0 / n_views, elevation, distance) for k in range(n_views)]


def stack_scenario(seed: int = 7, n_views: int = 3) -> ScenarioSpec:
    """Two boxes stacked on the ground, seen from ``n_views`` azimuths."""
    boxes = [BoxSpec.on_ground(1, (0.4, 0.3, 0.2), (0.0, 0.0), 10.0),
             BoxSpec.on_ground(2, (0.2, 0.2, 0.15), (0.06, 0.04), 25.0, z_bottom=0.2)]
    return ScenarioSpec(boxes, _ring(n_views), noise_sigma=0.0, point_spacing=0.01, seed=seed,
                        ground_margin=0.15)


def cantilever_scenario(seed: int = 0, n_views: int = 4) -> ScenarioSpec:
    """Pillar 1 carries beam 2 whose overhang is balanced by counterweight 3."""
    boxes = [BoxSpec(1, (0.2, 0.2, 0.3), (0.1, 0.0, 0.15)),
             BoxSpec(2, (0.52, 0.2, 0.06), (0.24, 0.0, 0.33)),
             BoxSpec(3, (0.16, 0.2, 0.16), (0.06, 0.0, 0.44))]
    return ScenarioSpec(boxes, _ring(n_views, 45.0), point_spacing=0.01, seed=seed,
                        shuffle_labels=False, ground_margin=0.15)


def lean_scenario(seed: int = 0, n_views: int = 4) -> ScenarioSpec:
    """Plank 2 overhangs its support 1 and is held by friction against tall box 3."""
    boxes = [BoxSpec(1, (0.2, 0.2, 0.2), (0.1, 0.0, 0.1)),
             BoxSpec(2, (0.52, 0.16, 0.06), (0.24, 0.0, 0.23)),
             BoxSpec(3, (0.2, 0.3, 0.4), (0.6, 0.0, 0.2))]
    return ScenarioSpec(boxes, _ring(n_views, 45.0), point_spacing=0.01, seed=seed,
                        shuffle_labels=False, ground_margin=0.15)
