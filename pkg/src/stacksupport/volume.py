"""Voxel occupancy fusion, hidden-voxel completion and contact extraction.

The grid is dense and axis-aligned with its bottom face on the ground
plane ``z = 0``. Each cell holds one state: ``FREE``, ``HIDDEN`` or a
positive object label (occupied).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import (GeometryError, OMBB3, RigidTransform, as_points,
                       fit_plane_lstsq, min_area_rect, ombb_from_plane, plane_basis, ransac_plane)

log = logging.getLogger(__name__)

FREE = -1
HIDDEN = -2
GROUND = 0
MAGIC = b"VOXRLE1\n"


class VolumeError(ValueError):
    pass


@dataclass
class VoxelScene:
    voxel_size: float
    origin: np.ndarray
    grid: np.ndarray
    points: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def labels(self) -> list:
        vals = np.unique(self.grid)
        return [int(v) for v in vals if v > 0]

    def copy(self) -> "VoxelScene":
        return VoxelScene(self.voxel_size, self.origin.copy(), self.grid.copy(), dict(self.points))

    def count(self, state: int) -> int:
        return int(np.count_nonzero(self.grid == state))

    def voxels(self, state: int) -> np.ndarray:
        return np.argwhere(self.grid == state)

    def centers(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.voxel_size

    def index_of(self, points) -> np.ndarray:
        idx = np.floor((as_points(points) - self.origin) / self.voxel_size).astype(int)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def volume(self, label: int) -> float:
        return self.count(label) * self.voxel_size ** 3

    def estimated_volume(self, label: int) -> float:
        """Volume with voxels that face free space counted as half full.

        A surface sample occupies the whole voxel it falls in, so observed
        faces add a shell about half a voxel thick; this undoes it.
        """
        occ = self.grid == label
        touch = np.zeros_like(occ)
        for off in _OFFS6:
            touch |= _shifted(self.grid, off) == FREE
        return (occ.sum() - 0.5 * np.count_nonzero(occ & touch)) * self.voxel_size ** 3

    def centroid(self, label: int) -> np.ndarray:
        idx = self.voxels(label)
        if not len(idx):
            raise VolumeError(f"object {label} has no voxels")
        return self.centers(idx).mean(axis=0)


def scene_diameter(points) -> float:
    pts = as_points(points)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def default_voxel_size(points) -> float:
    return scene_diameter(points) / 64.0


def _segment_box(o, d, lo, hi):
    """Entry/exit parameters of rays ``o + t d`` against an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    inside = (o >= lo) & (o <= hi)
    t_lo = np.where(d == 0, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(d == 0, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return t_lo.max(axis=1), t_hi.min(axis=1)


def _carve_rays(free: np.ndarray, origin, vs, eye, pts, chunk=4000):
    """Mark voxels traversed by ``eye -> pts`` as free, stopping a voxel short of each point."""
    shape = np.array(free.shape)
    lo, hi = origin, origin + shape * vs
    step = vs / 3.0
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        seg = p - eye
        length = np.linalg.norm(seg, axis=1)
        d = seg / length[:, None]
        t_in, t_out = _segment_box(np.broadcast_to(eye, p.shape), d, lo, hi)
        t0 = np.maximum(t_in, 0.0)
        t1 = np.minimum(t_out, length - vs)
        n = np.where(t1 > t0, np.ceil((t1 - t0) / step), 0).astype(int)
        if not n.sum():
            continue
        ray = np.repeat(np.arange(len(p)), n)
        k = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        t = np.minimum(t0[ray] + (k + 0.5) * step, t1[ray])
        q = eye + d[ray] * t[:, None]
        idx = np.floor((q - origin) / vs).astype(int)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        idx = idx[ok]
        free[idx[:, 0], idx[:, 1], idx[:, 2]] = True


def carve(views, transforms=None, voxel_size: float | None = None, margin: int = 2) -> VoxelScene:
    """Fuse registered views into occupied / free / hidden voxels.

    ``transforms[k]`` maps view ``k`` into the common frame (``None`` means
    the views are already there). Label 0 marks ground points: they carve
    free space but never occupy voxels.
    """
    views = list(views)
    if not views:
        raise VolumeError("no views to carve")
    if transforms is None:
        transforms = [RigidTransform.identity()] * len(views)
    if len(transforms) != len(views):
        raise VolumeError("one transform per view is required")
    clouds = [v.transformed(T) for v, T in zip(views, transforms)]
    obj_pts, obj_lab = [], []
    for c in clouds:
        for r in c.regions:
            if r.label != GROUND:
                obj_pts.append(r.points)
                obj_lab.append(np.full(len(r.points), int(r.label)))
    if not obj_pts:
        raise VolumeError("views contain no object points")
    P = np.vstack(obj_pts)
    L = np.concatenate(obj_lab)
    vs = default_voxel_size(P) if voxel_size is None else float(voxel_size)
    if vs <= 0:
        raise VolumeError("voxel size must be positive")
    lo = P.min(axis=0) - margin * vs
    hi = P.max(axis=0) + margin * vs
    lo[2] = 0.0
    shape = np.maximum(np.ceil((hi - lo) / vs).astype(int), 1)
    free = np.zeros(shape, dtype=bool)
    for c in clouds:
        pts, _ = c.all_points()
        _carve_rays(free, lo, vs, c.camera_position, pts)
    grid = np.where(free, FREE, HIDDEN).astype(np.int32)
    scene = VoxelScene(vs, lo, grid)
    idx = scene.index_of(P)
    flat = np.ravel_multi_index(idx.T, grid.shape)
    # majority label per voxel, smallest label on ties
    labels = np.unique(L)
    votes = np.zeros((len(labels), grid.size), dtype=np.int32)
    for i, l in enumerate(labels):
        np.add.at(votes[i], flat[L == l], 1)
    hit = votes.sum(axis=0) > 0
    winner = labels[np.argmax(votes, axis=0)]
    gflat = grid.reshape(-1)
    gflat[hit] = winner[hit]
    scene.points = {int(l): P[L == l] for l in labels}
    return scene


def complete_object(scene: VoxelScene, label: int, ransac_threshold: float | None = None) -> VoxelScene:
    """Assign hidden voxels inside the object's oriented box to the object."""
    pts = scene.points.get(label)
    if pts is None or not np.any(scene.grid == label):
        raise VolumeError(f"object {label} has no occupied voxels")
    out = scene.copy()
    box = object_box(scene, label, ransac_threshold)
    if box is None:
        return out
    hidden = np.argwhere(out.grid == HIDDEN)
    if len(hidden):
        # centres lying on the box faces count as inside despite round-off
        inside = box.contains(out.centers(hidden), pad=1e-9 * scene.voxel_size)
        sel = hidden[inside]
        out.grid[sel[:, 0], sel[:, 1], sel[:, 2]] = label
    return out


def object_box(scene: VoxelScene, label: int, ransac_threshold: float | None = None) -> OMBB3 | None:
    pts = scene.points[label]
    thr = scene.voxel_size / 2 if ransac_threshold is None else ransac_threshold
    try:
        plane, _ = ransac_plane(pts, inlier_threshold=thr, rng=0)
    except GeometryError:
        log.warning("object %r is degenerate; completion skipped", label)
        return None
    return ombb_from_plane(pts, plane)


def complete_all(scene: VoxelScene) -> VoxelScene:
    """Complete every object, largest visible volume first; the first claim wins."""
    order = sorted(scene.labels, key=lambda l: (-scene.count(l), l))
    for l in order:
        scene = complete_object(scene, l)
    return scene


# ---------------------------------------------------------------- contacts

_OFFS26 = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                    if (i, j, k) != (0, 0, 0)])
_OFFS6 = np.array([o for o in _OFFS26 if np.abs(o).sum() == 1])


def _shifted(grid: np.ndarray, off) -> np.ndarray:
    """``out[i] = grid[i + off]``, padded with FREE outside the grid."""
    out = np.full_like(grid, FREE)
    src = tuple(slice(max(o, 0), grid.shape[d] + min(o, 0)) for d, o in enumerate(off))
    dst = tuple(slice(max(-o, 0), grid.shape[d] + min(-o, 0)) for d, o in enumerate(off))
    out[dst] = grid[src]
    return out


@dataclass(frozen=True)
class ContactRegion:
    labels: tuple
    contact_points: np.ndarray
    normal: np.ndarray
    degenerate: bool = False

    def grown(self, size: float) -> "ContactRegion":
        """Square of side ``size`` around the contact centre, normal kept."""
        c = self.contact_points.mean(axis=0)
        u, v, _ = plane_basis(self.normal)
        h = size / 2
        pts = np.array([c - h * u - h * v, c + h * u - h * v, c + h * u + h * v, c - h * u + h * v])
        return ContactRegion(self.labels, pts, self.normal, self.degenerate)


@dataclass
class ContactGraph:
    nodes: list
    edges: dict = field(default_factory=dict)

    def has_edge(self, a, b) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def neighbors(self, a) -> list:
        return sorted({y if x == a else x for x, y in self.edges if a in (x, y)})

    def edge_set(self) -> set:
        return set(self.edges)


def adjacent_pairs(scene: VoxelScene, offsets=_OFFS26) -> set:
    g = scene.grid
    pairs = set()
    for off in offsets:
        nb = _shifted(g, off)
        m = (g > 0) & (nb > 0) & (g != nb)
        if m.any():
            a, b = g[m], nb[m]
            for x, y in set(zip(a.tolist(), b.tolist())):
                pairs.add((min(x, y), max(x, y)))
    return pairs


def contact_graph(scene: VoxelScene, with_regions: bool = True) -> ContactGraph:
    labels = scene.labels
    graph = ContactGraph([GROUND] + labels)
    pairs = adjacent_pairs(scene)
    bottom = set(int(v) for v in np.unique(scene.grid[:, :, 0]) if v > 0)
    for l in sorted(bottom):
        pairs.add((GROUND, l))
    for a, b in sorted(pairs):
        graph.edges[(a, b)] = contact_region(scene, a, b) if with_regions else None
    return graph


def _interface(scene: VoxelScene, a: int, b: int, offsets) -> np.ndarray:
    """Midpoints between each voxel of ``a`` and its neighbours in ``b``."""
    g = scene.grid
    mids = []
    for off in offsets:
        nb = _shifted(g, off)
        idx = np.argwhere((g == a) & (nb == b))
        if len(idx):
            mids.append(scene.centers(idx) + 0.5 * scene.voxel_size * off)
    if not mids:
        return np.zeros((0, 3))
    return np.unique(np.vstack(mids).round(12), axis=0)


def _rect_region(labels, centers: np.ndarray, normal: np.ndarray, vs: float) -> ContactRegion:
    u, v, n = plane_basis(normal)
    c0 = centers.mean(axis=0)
    local = (centers - c0) @ np.stack([u, v]).T
    rect = min_area_rect(local)
    half = rect.half_extents + vs / 2
    signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    corners2 = rect.center + (signs * half) @ rect.axes
    offset = float(np.mean((centers - c0) @ n))
    pts = c0 + corners2 @ np.stack([u, v]) + offset * n
    return ContactRegion(labels, pts, n)


def contact_region(scene: VoxelScene, a: int, b: int) -> ContactRegion:
    """Contact rectangle between ``a`` and ``b``; the normal points from a into b."""
    vs = scene.voxel_size
    if a == GROUND or b == GROUND:
        obj = b if a == GROUND else a
        idx = np.argwhere(scene.grid[:, :, 0] == obj)
        if len(idx) < 3:
            return _degenerate_ground(scene, obj, idx, a, b)
        xy = scene.origin[:2] + (idx + 0.5) * vs
        centers = np.column_stack([xy, np.full(len(xy), scene.origin[2])])
        n = np.array([0.0, 0.0, 1.0]) if a == GROUND else np.array([0.0, 0.0, -1.0])
        return _rect_region((a, b), centers, n, vs)
    centers = _interface(scene, a, b, _OFFS6)
    if len(centers) < 3:
        centers = _interface(scene, a, b, _OFFS26)
    ca, cb = scene.centroid(a), scene.centroid(b)
    if len(centers) < 3:
        return _degenerate(a, b, centers, ca, cb)
    try:
        n = fit_plane_lstsq(centers).normal
    except GeometryError:
        # collinear interface: normal orthogonal to the line, closest to the centroid direction
        line = np.linalg.svd(centers - centers.mean(axis=0))[2][0]
        dc = cb - ca
        n = dc - (dc @ line) * line
        if np.linalg.norm(n) < 1e-12:
            return _degenerate(a, b, centers, ca, cb)
        n = n / np.linalg.norm(n)
    if (cb - ca) @ n < 0:
        n = -n
    return _rect_region((a, b), centers, n, vs)


def _degenerate(a, b, mids, ca, cb) -> ContactRegion:
    log.warning("contact %r-%r has %d interface samples; using a point contact", a, b, len(mids))
    c = mids.mean(axis=0) if len(mids) else (ca + cb) / 2
    n = cb - ca
    n = n / np.linalg.norm(n)
    return ContactRegion((a, b), np.tile(c, (4, 1)), n, degenerate=True)


def _degenerate_ground(scene, obj, idx, a, b) -> ContactRegion:
    log.warning("ground contact of %r has %d voxels; using a point contact", obj, len(idx))
    xy = scene.origin[:2] + (idx.mean(axis=0) + 0.5) * scene.voxel_size
    c = np.array([xy[0], xy[1], scene.origin[2]])
    n = np.array([0.0, 0.0, 1.0]) if a == GROUND else np.array([0.0, 0.0, -1.0])
    return ContactRegion((a, b), np.tile(c, (4, 1)), n, degenerate=True)


# ---------------------------------------------------------------- serialization

def _rle(flat: np.ndarray) -> np.ndarray:
    if not len(flat):
        return np.zeros((0, 2), dtype=np.int64)
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    runs = np.diff(np.concatenate([starts, [len(flat)]]))
    return np.column_stack([flat[starts], runs])


def to_bytes(scene: VoxelScene) -> bytes:
    """Run-length encoded grid (little-endian int32 value, uint32 run) after a JSON header."""
    runs = _rle(scene.grid.reshape(-1))
    header = {"voxel_size": scene.voxel_size, "origin": scene.origin.tolist(),
              "shape": list(scene.shape), "labels": scene.labels,
              "states": {"free": FREE, "hidden": HIDDEN}, "runs": len(runs)}
    hb = json.dumps(header, sort_keys=True).encode()
    body = np.empty(len(runs), dtype=[("v", "<i4"), ("n", "<u4")])
    body["v"], body["n"] = runs[:, 0], runs[:, 1]
    return MAGIC + struct.pack("<I", len(hb)) + hb + body.tobytes()


def from_bytes(data: bytes) -> VoxelScene:
    if not data.startswith(MAGIC):
        raise VolumeError("not a voxel scene file")
    off = len(MAGIC)
    (hl,) = struct.unpack_from("<I", data, off)
    header = json.loads(data[off + 4:off + 4 + hl])
    body = np.frombuffer(data[off + 4 + hl:], dtype=[("v", "<i4"), ("n", "<u4")])
    if len(body) != header["runs"]:
        raise VolumeError("truncated voxel scene file")
    flat = np.repeat(body["v"].astype(np.int32), body["n"].astype(np.int64))
    shape = tuple(header["shape"])
    if flat.size != math.prod(shape):
        raise VolumeError("voxel run lengths do not match the grid shape")
    return VoxelScene(float(header["voxel_size"]), np.array(header["origin"], float), flat.reshape(shape))
