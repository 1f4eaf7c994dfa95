"""Point-to-point ICP and multi-view fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LabeledPointCloud, Region, RigidTransform, as_points

log = logging.getLogger(__name__)


SHRINK = 0.7


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ICPConfig:
    max_iterations: int = 50
    convergence_delta: float = 1e-8
    # None means 3x the median nearest-neighbour spacing of the target
    correspondence_cutoff: float | None = None

    def __post_init__(self):
        if self.max_iterations <= 0 or self.convergence_delta <= 0:
            raise ValueError("ICP iteration settings must be positive")
        if self.correspondence_cutoff is not None and self.correspondence_cutoff <= 0:
            raise ValueError("correspondence cutoff must be positive")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    mse: float
    iterations: int
    history: tuple = field(default=(), repr=False)


def median_spacing(points: np.ndarray, tree: cKDTree | None = None) -> float:
    """Median distance to the nearest distinct neighbour (duplicates ignored)."""
    tree = tree or cKDTree(points)
    d, _ = tree.query(points, k=min(len(points), 8))
    d = d[:, 1:]
    pos = np.where(d > 1e-12, d, np.inf).min(axis=1)
    pos = pos[np.isfinite(pos)]
    return float(np.median(pos)) if len(pos) else 0.0


def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` onto ``dst``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


class TargetIndex:
    """KD trees and point spacing of a target cloud, reusable across ICP runs."""

    def __init__(self, dst: np.ndarray, dst_labels=None):
        self.points = as_points(dst)
        self.tree = cKDTree(self.points)
        self.spacing = median_spacing(self.points, self.tree) if len(self.points) > 1 else 0.0
        self.by_label = {}
        if dst_labels is not None:
            dst_labels = np.asarray(dst_labels)
            for lab in np.unique(dst_labels):
                tidx = np.flatnonzero(dst_labels == lab)
                self.by_label[lab] = (tidx, cKDTree(self.points[tidx]))


class _Matcher:
    """Nearest target point, optionally restricted to the same label."""

    def __init__(self, index: TargetIndex, src_labels=None):
        self.index = index
        self.n = len(index.points)
        self.groups = None
        if src_labels is None or not index.by_label:
            return
        src_labels = np.asarray(src_labels)
        self.groups = []
        for lab, (tidx, tree) in index.by_label.items():
            sidx = np.flatnonzero(src_labels == lab)
            if len(sidx):
                self.groups.append((sidx, tidx, tree))

    def query(self, pts: np.ndarray, bound: float = np.inf):
        """Distances past ``bound`` come back as ``bound``; unmatched labels as inf."""
        if self.groups is None:
            d, idx = self.index.tree.query(pts, distance_upper_bound=bound)
            return np.minimum(d, bound), np.minimum(idx, self.n - 1)
        d = np.full(len(pts), np.inf)
        idx = np.zeros(len(pts), dtype=int)
        for sidx, tidx, tree in self.groups:
            dd, ii = tree.query(pts[sidx], distance_upper_bound=bound)
            d[sidx] = np.minimum(dd, bound)
            idx[sidx] = tidx[np.minimum(ii, len(tidx) - 1)]
        return d, idx


def icp(source, target, init=None, cfg: ICPConfig | None = None,
        source_labels=None, target_labels=None, index: TargetIndex | None = None) -> RegistrationResult:
    """Align ``source`` onto ``target``; ``init`` is a RigidTransform or InitialGuess.

    Correspondences farther than the cutoff are dropped. A configured cutoff
    is a fixed limit. Without one, the cutoff starts at the larger of 3x the
    target spacing and 3x the median residual and shrinks geometrically
    towards the former; it never grows, so the truncated error is monotone.
    With per-point labels given for both sets, a source point may only
    correspond to target points carrying the same label. A prebuilt ``index``
    of the target (with its labels) saves rebuilding the trees per call.
    """
    cfg = cfg or ICPConfig()
    src, dst = as_points(source), as_points(target)
    if not len(src) or not len(dst):
        raise RegistrationError("ICP needs non-empty point sets")
    if init is None:
        T = RigidTransform.identity()
    elif isinstance(init, RigidTransform):
        T = init
    else:
        T = init.transform
    if index is None:
        index = TargetIndex(dst, target_labels if source_labels is not None else None)
    dst = index.points
    matcher = _Matcher(index, source_labels)
    fixed = cfg.correspondence_cutoff is not None
    base_cut = cfg.correspondence_cutoff
    if not fixed:
        base_cut = 3.0 * index.spacing
        if base_cut <= 0.0:
            raise RegistrationError("target has no distinct points to set a correspondence cutoff")

    d, idx = matcher.query(T.apply(src))
    if not np.isfinite(d).any():
        raise RegistrationError("registration diverged")
    cut = base_cut if fixed else max(base_cut, 3.0 * float(np.median(d[np.isfinite(d)])))
    prev_trunc = np.mean(np.minimum(d, cut) ** 2)
    prev_mse = None
    history = []
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        mask = d < cut
        if not mask.any():
            raise RegistrationError("registration diverged")
        step = best_rigid_transform(T.apply(src[mask]), dst[idx[mask]])
        T = step @ T
        # the cutoff never grows, so clipping at it changes none of the quantities below
        d, idx = matcher.query(T.apply(src), cut)
        trunc = np.mean(np.minimum(d, cut) ** 2)
        assert trunc <= prev_trunc + 1e-12 * max(1.0, prev_trunc), "ICP error increased"
        if not fixed:
            cut = max(base_cut, min(SHRINK * cut, 3.0 * float(np.median(d[np.isfinite(d)]))))
        prev_trunc = np.mean(np.minimum(d, cut) ** 2)
        inl = d < cut
        if not inl.any():
            raise RegistrationError("registration diverged")
        mse = float(np.mean(d[inl] ** 2))
        history.append(mse)
        if prev_mse is not None and abs(prev_mse - mse) < cfg.convergence_delta:
            break
        if prev_mse is None and mse < cfg.convergence_delta:
            break
        prev_mse = mse
    return RegistrationResult(T, history[-1], it, tuple(history))


def alignment_mse(source, target, T: RigidTransform) -> float:
    """Mean squared nearest-neighbour distance of every transformed source point."""
    d, _ = cKDTree(as_points(target)).query(T.apply(as_points(source)))
    return float(np.mean(d ** 2))


def fuse_views(views, transforms, matches=None) -> LabeledPointCloud:
    """Merge views into the frame of ``views[0]``.

    ``transforms[k]`` maps view ``k+1`` into the reference frame and
    ``matches[k]`` pairs reference labels with labels of view ``k+1``.
    Matched regions share the reference label; unmatched ones get fresh
    labels after the largest label seen so far.
    """
    views = list(views)
    if not views:
        raise RegistrationError("nothing to fuse")
    if len(transforms) != len(views) - 1:
        raise RegistrationError(f"expected {len(views) - 1} transforms, got {len(transforms)}")
    if matches is not None and len(matches) != len(views) - 1:
        raise RegistrationError("one match per non-reference view is required")
    ref = views[0]
    parts = {r.label: [r.points] for r in ref.regions}
    next_label = _next_label(ref.labels)
    for k, (view, T) in enumerate(zip(views[1:], transforms)):
        pairs = {} if matches is None else {b: a for a, b in matches[k].pairs}
        for r in view.regions:
            pts = T.apply(r.points)
            if r.label in pairs:
                parts.setdefault(pairs[r.label], []).append(pts)
            else:
                parts[next_label] = [pts]
                next_label = _next_label(list(parts))
    regions = tuple(Region(l, np.vstack(p)) for l, p in sorted(parts.items()))
    return LabeledPointCloud(regions, ref.view_pose, "fused")


def _next_label(labels) -> int:
    ints = [int(l) for l in labels if isinstance(l, (int, np.integer))]
    return max(ints, default=0) + 1
