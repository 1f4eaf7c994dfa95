"""Geometric primitives and region statistics shared by the pipeline.

Point sets are plain ``(N, 3)`` float arrays; the value types below are
frozen dataclasses and never mutate after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for empty or degenerate geometric input."""


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("point coordinates must be finite")
    return pts


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation followed by translation: ``p -> R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation determinant must be +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rot_z(yaw), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        M = np.asarray(matrix, dtype=float).reshape(4, 4)
        if np.max(np.abs(M[3] - [0.0, 0.0, 0.0, 1.0])) > ORTHO_TOL:
            raise GeometryError("last row of a rigid 4x4 matrix must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"RigidTransform(yaw={np.degrees(self.yaw):.3f}deg, t={self.translation.round(6).tolist()})"


@dataclass(frozen=True, eq=False)
class Region:
    """Points of one segmented object."""

    label: Hashable
    points: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points)
        if len(pts) == 0:
            raise GeometryError(f"region {self.label!r} is empty")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def is_degenerate(self) -> bool:
        return len(self.points) < 3

    def transformed(self, T: RigidTransform) -> "Region":
        return Region(self.label, T.apply(self.points))


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """One pre-segmented, ground-aligned view.

    ``view_pose`` is the camera pose expressed in the same frame as the
    region points (its translation is the camera position).
    """

    regions: tuple
    view_pose: RigidTransform = field(default_factory=RigidTransform)
    view_id: Hashable = 0

    def __post_init__(self):
        regions = tuple(self.regions)
        labels = [r.label for r in regions]
        if len(set(labels)) != len(labels):
            raise GeometryError(f"duplicate labels in view {self.view_id!r}")
        object.__setattr__(self, "regions", regions)

    @property
    def labels(self) -> list:
        return [r.label for r in self.regions]

    def region(self, label) -> Region:
        for r in self.regions:
            if r.label == label:
                return r
        raise KeyError(label)

    def all_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked points and a parallel label array."""
        if not self.regions:
            return np.zeros((0, 3)), np.zeros(0, dtype=object)
        pts = np.vstack([r.points for r in self.regions])
        labels = np.concatenate([np.full(len(r), r.label, dtype=object) for r in self.regions])
        return pts, labels

    def transformed(self, T: RigidTransform) -> "LabeledPointCloud":
        return LabeledPointCloud(tuple(r.transformed(T) for r in self.regions),
                                 T @ self.view_pose, self.view_id)

    @property
    def camera_position(self) -> np.ndarray:
        return self.view_pose.translation


@dataclass(frozen=True)
class MBR2:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if self.x_lo > self.x_hi or self.y_lo > self.y_hi:
            raise GeometryError(f"inverted rectangle {self}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_lo + self.x_hi) / 2, (self.y_lo + self.y_hi) / 2)

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def height(self) -> float:
        return self.y_hi - self.y_lo


@dataclass(frozen=True, eq=False)
class Plane:
    """Points ``p`` with ``normal @ p + offset == 0``; ``normal`` is unit length."""

    normal: np.ndarray
    offset: float

    def distance(self, points) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal + self.offset)


@dataclass(frozen=True, eq=False)
class OMBB3:
    """Oriented box; ``axes`` rows are the unit box axes."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float).reshape(3, 3)
        he = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.max(np.abs(axes @ axes.T - np.eye(3))) > 1e-6:
            raise GeometryError("box axes must be orthonormal")
        if np.any(he <= 0):
            raise GeometryError("box half extents must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "half_extents", he)

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.axes.T

    def contains(self, points, pad: float = 0.0) -> np.ndarray:
        return np.all(np.abs(self.local(points)) <= self.half_extents + pad, axis=1)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.center + (signs * self.half_extents) @ self.axes


def region_centroid(region: Region | np.ndarray) -> np.ndarray:
    pts = region.points if isinstance(region, Region) else as_points(region)
    if len(pts) == 0:
        raise GeometryError("centroid of an empty region")
    return pts.mean(axis=0)


def region_radius(region: Region | np.ndarray) -> float:
    pts = region.points if isinstance(region, Region) else as_points(region)
    c = region_centroid(pts)
    return float(np.max(np.linalg.norm(pts - c, axis=1)))


def project_mbr(region: Region | np.ndarray) -> MBR2:
    """Axis-aligned bounding rectangle of the ground projection."""
    pts = region.points if isinstance(region, Region) else as_points(region)
    if len(pts) == 0:
        raise GeometryError("bounding rectangle of an empty region")
    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    return MBR2(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def convex_hull_2d(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise hull without repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass(frozen=True, eq=False)
class Rect2:
    """Oriented 2D rectangle: ``axes`` rows are unit in-plane directions."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    @property
    def area(self) -> float:
        return float(4.0 * self.half_extents[0] * self.half_extents[1])

    def corners(self) -> np.ndarray:
        signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
        return self.center + (signs * self.half_extents) @ self.axes


def min_area_rect(points) -> Rect2:
    """Minimum-area enclosing rectangle by rotating calipers over hull edges.

    One side of the optimal rectangle is collinear with a hull edge, so only
    the hull edge directions are tried. Collinear or coincident input yields
    a zero-width rectangle.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise GeometryError("rectangle of an empty point set")
    hull = convex_hull_2d(pts)
    if len(hull) == 1:
        return Rect2(hull[0].copy(), np.eye(2), np.zeros(2))
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.linalg.norm(edges, axis=1)
    keep = lengths > 0
    dirs = edges[keep] / lengths[keep, None]
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
    along = hull @ dirs.T
    across = hull @ normals.T
    areas = (along.max(0) - along.min(0)) * (across.max(0) - across.min(0))
    k = int(np.argmin(areas))
    u, v = dirs[k], normals[k]
    a_lo, a_hi = along[:, k].min(), along[:, k].max()
    c_lo, c_hi = across[:, k].min(), across[:, k].max()
    center = u * (a_lo + a_hi) / 2 + v * (c_lo + c_hi) / 2
    return Rect2(center, np.stack([u, v]), np.array([(a_hi - a_lo) / 2, (c_hi - c_lo) / 2]))


def _is_collinear(pts: np.ndarray, rel_tol: float = 1e-9) -> bool:
    if len(pts) < 3:
        return True
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return s[0] == 0 or s[1] <= rel_tol * s[0]


def plane_from_points(p0, p1, p2) -> Plane | None:
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return Plane(n, float(-n @ p0))


def fit_plane_lstsq(points) -> Plane:
    """Total-least-squares plane through ``points`` (smallest principal axis)."""
    pts = as_points(points)
    if _is_collinear(pts):
        raise GeometryError("cannot fit a plane to collinear points")
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[2]
    return Plane(n, float(-n @ c))


def ransac_plane(points, iterations: int = 500, inlier_threshold: float = 0.01,
                 rng: np.random.Generator | int | None = 0) -> tuple[Plane, np.ndarray]:
    """Fit the plane supported by the most points.

    Returns the plane and the sorted indices of its inliers. Among candidates
    with equal inlier count the first one sampled is kept.
    """
    pts = as_points(points)
    if len(pts) < 3 or _is_collinear(pts):
        raise GeometryError("RANSAC needs at least three non-collinear points")
    rng = np.random.default_rng(rng)
    n = len(pts)
    best_plane, best_mask, best_count = None, None, -1
    if n == 3:
        triples = [np.arange(3)]
    else:
        triples = (rng.choice(n, 3, replace=False) for _ in range(iterations))
    for idx in triples:
        plane = plane_from_points(*pts[idx])
        if plane is None:
            continue
        mask = plane.distance(pts) <= inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_plane, best_mask, best_count = plane, mask, count
    if best_plane is None:
        raise GeometryError("RANSAC found no non-degenerate sample")
    inliers = pts[best_mask]
    if len(inliers) > 3 and not _is_collinear(inliers):
        refined = fit_plane_lstsq(inliers)
        if refined.normal @ best_plane.normal < 0:
            refined = Plane(-refined.normal, -refined.offset)
        mask = refined.distance(pts) <= inlier_threshold
        if mask.sum() >= best_count:
            best_plane, best_mask = refined, mask
    return best_plane, np.flatnonzero(best_mask)


def plane_basis(normal) -> np.ndarray:
    """Rows ``(u, v, n)`` forming a right-handed frame around ``normal``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.stack([u, v, n])


def _aabb(pts: np.ndarray, min_half: float) -> OMBB3:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return OMBB3((lo + hi) / 2, np.eye(3), np.maximum((hi - lo) / 2, min_half), degenerate=True)


def ombb_from_plane(region: Region | np.ndarray, plane: Plane, min_half_extent: float = 1e-6) -> OMBB3:
    """Oriented box with one face parallel to ``plane``.

    The in-plane orientation is the minimum-area rectangle of all points
    projected onto the plane; the box covers every point.
    """
    pts = region.points if isinstance(region, Region) else as_points(region)
    frame = plane_basis(plane.normal)
    local = pts @ frame.T
    if _is_collinear(np.column_stack([local[:, :2], np.zeros(len(local))])):
        log.warning("degenerate plane projection, falling back to an axis-aligned box")
        return _aabb(pts, min_half_extent)
    rect = min_area_rect(local[:, :2])
    h_lo, h_hi = local[:, 2].min(), local[:, 2].max()
    u = rect.axes[0] @ frame[:2]
    v = rect.axes[1] @ frame[:2]
    n = frame[2]
    if np.linalg.det(np.stack([u, v, n])) < 0:
        v = -v
    center = rect.center @ frame[:2] + n * (h_lo + h_hi) / 2
    half = np.array([rect.half_extents[0], rect.half_extents[1], (h_hi - h_lo) / 2])
    return OMBB3(center, np.stack([u, v, n]), np.maximum(half, min_half_extent))


def align_to_ground(points, plane: Plane) -> tuple[np.ndarray, RigidTransform]:
    """Rotate and shift ``points`` so that ``plane`` becomes ``z = 0``.

    The plane normal is mapped to +z; returns the moved points and the
    transform used.
    """
    pts = as_points(points)
    n = plane.normal / np.linalg.norm(plane.normal)
    frame = plane_basis(n)
    T = RigidTransform(frame, np.array([0.0, 0.0, plane.offset]))
    return T.apply(pts), T


def stack_regions(regions: Iterable[Region]) -> np.ndarray:
    regions = list(regions)
    if not regions:
        return np.zeros((0, 3))
    return np.vstack([r.points for r in regions])


def non_degenerate(regions: Sequence[Region]) -> list[Region]:
    out = []
    for r in regions:
        if r.is_degenerate:
            log.warning("region %r has %d points; skipped for plane fitting and stability", r.label, len(r))
        else:
            out.append(r)
    return out
