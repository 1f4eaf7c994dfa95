"""Cross-view object matching from qualitative direction relations."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (LabeledPointCloud, MBR2, RigidTransform, convex_hull_2d, project_mbr,
                       region_centroid, region_radius, rot_z)
from .qsr import ERCDRTile, QSRError, abs_distance_table, ercdr_of, normalized_distance_table

log = logging.getLogger(__name__)

PRUNE_ABOVE = 8
RADIUS_RATIO = 0.2
SCORE_TIE = 1e-12


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class RelationGraph:
    view_id: object
    relations: dict
    labels: tuple
    radii: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def tile(self, a, b) -> ERCDRTile:
        return self.relations[(a, b)]

    def index_matrix(self) -> np.ndarray:
        """Tile indices laid out by label position; the diagonal is -1."""
        n = len(self.labels)
        M = np.full((n, n), -1, dtype=int)
        for i, a in enumerate(self.labels):
            for j, b in enumerate(self.labels):
                if i != j:
                    M[i, j] = self.relations[(a, b)].index
        return M


def _mbr_ok(m: MBR2) -> bool:
    return m.x_hi > m.x_lo and m.y_hi > m.y_lo


def _graph_from_mbrs(view_id, mbrs: dict, radii: dict | None = None) -> RelationGraph:
    labels = tuple(sorted(mbrs))
    rel = {(a, b): ercdr_of(mbrs[a], mbrs[b]) for a in labels for b in labels if a != b}
    return RelationGraph(view_id, rel, labels, dict(radii or {}))


def build_relation_graph(view: LabeledPointCloud) -> RelationGraph:
    """Direction tile for every ordered pair of regions in one view."""
    mbrs, radii = {}, {}
    for r in view.regions:
        m = project_mbr(r)
        if r.is_degenerate or not _mbr_ok(m):
            log.warning("region %r in view %r is degenerate; left out of the relation graph",
                        r.label, view.view_id)
            continue
        mbrs[r.label] = m
        radii[r.label] = region_radius(r)
    if len(mbrs) < 2:
        raise MatchingError(f"view {view.view_id!r} needs at least 2 usable regions, has {len(mbrs)}")
    return _graph_from_mbrs(view.view_id, mbrs, radii)


def get_permutation(ids, prefix=(), length: int | None = None) -> list:
    """All ordered ``length``-selections of ``ids`` in depth-first order."""
    ids = list(ids)
    length = len(ids) if length is None else length
    if length > len(ids):
        raise MatchingError("permutation length exceeds the number of ids")
    out = []

    def rec(pre):
        if len(pre) == length:
            out.append(list(pre))
            return
        for i in ids:
            if i not in pre:
                rec(pre + [i])

    rec(list(prefix))
    return out


def _pruned_permutations(ids, against, radii_ids: dict, radii_against: dict) -> list:
    """Like ``get_permutation`` but only pairs objects of similar radius."""
    out = []

    def ok(a, b):
        ra, rb = radii_ids.get(a), radii_against.get(b)
        if ra is None or rb is None:
            return True
        return abs(ra - rb) < RADIUS_RATIO * max(ra, rb)

    def rec(pre):
        if len(pre) == len(against):
            out.append(list(pre))
            return
        target = against[len(pre)]
        for i in ids:
            if i not in pre and ok(i, target):
                rec(pre + [i])

    rec([])
    if not out:
        log.warning("radius pruning left no candidates; falling back to radius-sorted pairing")
        order = sorted(ids, key=lambda a: radii_ids.get(a, 0.0))
        rank = sorted(range(len(against)), key=lambda k: radii_against.get(against[k], 0.0))
        perm = [None] * len(against)
        for k, a in zip(rank, order):
            perm[k] = a
        out.append(perm)
    return out


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple
    score: float
    abs_distance: int = 0
    # yaw (radians) applied to view 2 before its relation graph was built
    view2_yaw: float = 0.0

    def __post_init__(self):
        left = [a for a, _ in self.pairs]
        right = [b for _, b in self.pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise MatchingError("a label appears twice on one side of the match")

    def as_dict(self) -> dict:
        return dict(self.pairs)


def _candidate_scores(g1: RelationGraph, g2: RelationGraph, left: np.ndarray, right: np.ndarray):
    """Variance and summed |tile distance| per candidate (rows of label positions)."""
    M1, M2 = g1.index_matrix(), g2.index_matrix()
    k = left.shape[1]
    A = M1[left[:, :, None], left[:, None, :]]
    B = M2[right[:, :, None], right[:, None, :]]
    off = ~np.eye(k, dtype=bool)
    A, B = A[:, off], B[:, off]
    D = normalized_distance_table()[A, B]
    S = abs_distance_table()[A, B].sum(axis=1)
    return D.var(axis=1), S


def get_matched_objects(g1: RelationGraph, g2: RelationGraph, prune_above: int = PRUNE_ABOVE,
                        chunk: int = 200_000) -> MatchResult:
    """Pairing of objects across two views with the most uniform relation change.

    Each k-permutation of the larger label list is paired in order with the
    smaller list; the candidate whose normalized tile distances have the
    smallest variance wins. Ties go to the smaller summed absolute tile
    distance, then to the lexicographically smallest pair list.
    """
    if len(g1) < 2 or len(g2) < 2:
        raise MatchingError("both views need at least 2 objects")
    swap = len(g1) < len(g2)
    big, small = (g2, g1) if swap else (g1, g2)
    if len(big) > prune_above:
        perms = _pruned_permutations(big.labels, small.labels, big.radii, small.radii)
    else:
        perms = get_permutation(big.labels, (), len(small))
    pos_big = {l: i for i, l in enumerate(big.labels)}
    fixed = np.arange(len(small))
    best = None
    for start in range(0, len(perms), chunk):
        block = np.array([[pos_big[l] for l in p] for p in perms[start:start + chunk]], dtype=int)
        rest = np.broadcast_to(fixed, block.shape)
        left, right = (rest, block) if swap else (block, rest)
        var, S = _candidate_scores(g1, g2, left, right)
        for c in np.lexsort((S, np.round(var / SCORE_TIE))):
            # candidates sharing the minimal (var, S) key are compared by pairs
            pairs = _pairs(g1, g2, left[c], right[c])
            key = (round(float(var[c]) / SCORE_TIE), int(S[c]), pairs)
            if best is None or key < best[0]:
                best = (key, float(var[c]), int(S[c]))
            head = (round(float(var[c]) / SCORE_TIE), int(S[c]))
            if head > best[0][:2]:
                break
    (_, _, pairs), score, s = best
    return MatchResult(pairs, score, s)


def _pairs(g1, g2, left, right) -> tuple:
    return tuple(sorted((g1.labels[i], g2.labels[j]) for i, j in zip(left, right)))


def match_views(v1: LabeledPointCloud, v2: LabeledPointCloud, offset_step_deg: float = 15.0) -> MatchResult:
    """Match two views, searching view-2 yaw offsets within one quarter turn.

    Direction tiles only change cleanly under quarter turns, so view 2 is
    pre-rotated by each offset in ``[0, 90)`` and the lowest-variance
    matching over all offsets wins (earliest offset on ties).
    """
    if offset_step_deg <= 0 or offset_step_deg > 90:
        raise MatchingError("offset step must be in (0, 90] degrees")
    g1 = build_relation_graph(v1)
    best = None
    for off in np.arange(0.0, 90.0, offset_step_deg):
        yaw = math.radians(float(off))
        g2 = build_relation_graph(v2.transformed(RigidTransform.from_yaw(yaw)) if off else v2)
        m = get_matched_objects(g1, g2)
        if best is None or (round(m.score / SCORE_TIE), m.abs_distance) < (round(best.score / SCORE_TIE), best.abs_distance):
            best = MatchResult(m.pairs, m.score, m.abs_distance, yaw)
    return best


def candidate_matches(v1: LabeledPointCloud, v2: LabeledPointCloud, top: int = 4,
                      offset_step_deg: float = 15.0) -> list:
    """The ``top`` best distinct pairings over all view-2 yaw offsets.

    Ranked like ``match_views``: variance, then summed absolute tile
    distance, then offset order, then the pair list. The first entry is the
    ``match_views`` result.
    """
    if top < 1:
        raise MatchingError("need at least one candidate")
    if offset_step_deg <= 0 or offset_step_deg > 90:
        raise MatchingError("offset step must be in (0, 90] degrees")
    g1 = build_relation_graph(v1)
    best: dict = {}
    for k, off in enumerate(np.arange(0.0, 90.0, offset_step_deg)):
        yaw = math.radians(float(off))
        g2 = build_relation_graph(v2.transformed(RigidTransform.from_yaw(yaw)) if off else v2)
        swap = len(g1) < len(g2)
        big, small = (g2, g1) if swap else (g1, g2)
        perms = get_permutation(big.labels, (), len(small))
        pos = {l: i for i, l in enumerate(big.labels)}
        block = np.array([[pos[l] for l in p] for p in perms], dtype=int)
        rest = np.broadcast_to(np.arange(len(small)), block.shape)
        left, right = (rest, block) if swap else (block, rest)
        var, S = _candidate_scores(g1, g2, left, right)
        order = np.lexsort((S, np.round(var / SCORE_TIE)))
        heads = list(zip(np.round(var[order] / SCORE_TIE).astype(np.int64), S[order]))
        # keep whole tie groups so the pair-list tie-break stays exact
        limit = heads[min(len(order), top) - 1]
        for c, h in zip(order, heads):
            if h > limit:
                break
            pairs = _pairs(g1, g2, left[c], right[c])
            key = (round(float(var[c]) / SCORE_TIE), int(S[c]), k, pairs)
            if pairs not in best or key < best[pairs][0]:
                best[pairs] = (key, MatchResult(pairs, float(var[c]), int(S[c]), yaw))
    ranked = sorted(best.values(), key=lambda kv: kv[0])
    return [m for _, m in ranked[:top]]


# ---------------------------------------------------------------- initial guess

@dataclass(frozen=True)
class InitialGuess:
    yaw: float
    translation: np.ndarray

    def __post_init__(self):
        y = (self.yaw + math.pi) % (2 * math.pi) - math.pi
        object.__setattr__(self, "yaw", float(y))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform.from_yaw(self.yaw, self.translation)

    @classmethod
    def from_transform(cls, T: RigidTransform) -> "InitialGuess":
        return cls(T.yaw, T.translation)


def _yaw_objective(yaw, tiles1, hulls2, pairs, c1, c2):
    R = rot_z(yaw)[:2, :2]
    mbrs = {}
    for l2, h in hulls2.items():
        p = h @ R.T
        lo, hi = p.min(axis=0), p.max(axis=0)
        mbrs[l2] = MBR2(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))
    table = abs_distance_table()
    s = 0
    for a1, a2 in pairs:
        for b1, b2 in pairs:
            if a1 != b1:
                s += table[tiles1[(a1, b1)].index, ercdr_of(mbrs[a2], mbrs[b2]).index]
    rc2 = c2[:, :2] @ R.T
    d = (c1[:, :2] - c1[:, :2].mean(0)) - (rc2 - rc2.mean(0))
    return int(s), float(np.sum(d * d))


def estimate_initial_transform(match: MatchResult, v1: LabeledPointCloud, v2: LabeledPointCloud,
                               grid_deg: float = 1.0, tol_deg: float = 0.1) -> InitialGuess:
    """Yaw and translation taking view-2 coordinates into view 1.

    Yaw minimises the summed absolute tile distance between the view-1
    relations and those of the rotated view-2 objects on a coarse grid,
    with the centroid residual breaking ties; the best grid cell is then
    refined by golden-section search. Translation aligns the mean matched
    centroids.
    """
    if not match.pairs:
        raise MatchingError("empty match")
    pairs = list(match.pairs)
    c1 = np.array([region_centroid(v1.region(a)) for a, _ in pairs])
    c2 = np.array([region_centroid(v2.region(b)) for _, b in pairs])
    if len(pairs) >= 2:
        mbrs1 = {a: project_mbr(v1.region(a)) for a, _ in pairs}
        tiles1 = {}
        for a in mbrs1:
            for b in mbrs1:
                if a != b:
                    try:
                        tiles1[(a, b)] = ercdr_of(mbrs1[a], mbrs1[b])
                    except QSRError:
                        raise MatchingError(f"degenerate region {b!r} in view 1")
        hulls2 = {}
        for _, b in pairs:
            pts = v2.region(b).points[:, :2]
            hulls2[b] = convex_hull_2d(pts) if len(pts) >= 3 else pts
        grid = np.deg2rad(np.arange(-180.0, 180.0, grid_deg))
        vals = [_yaw_objective(y, tiles1, hulls2, pairs, c1, c2) for y in grid]
        rmax = max(v[1] for v in vals) + 1e-12

        def f(y):
            s, r = _yaw_objective(y, tiles1, hulls2, pairs, c1, c2)
            return s + r / rmax

        k = min(range(len(grid)), key=lambda i: (vals[i][0], vals[i][1]))
        yaw = _golden(f, grid[k] - math.radians(grid_deg), grid[k] + math.radians(grid_deg),
                      math.radians(tol_deg), grid[k], f(grid[k]))
    else:
        yaw = 0.0
        log.warning("single matched object; yaw cannot be estimated and is set to 0")
    R = rot_z(yaw)
    t = c1.mean(axis=0) - R @ c2.mean(axis=0)
    return InitialGuess(yaw, t)


def _golden(f, a, b, tol, x0, f0):
    """Golden-section minimum on [a, b]; never worse than the start point ``x0``."""
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x if f(x) < f0 else x0


def match_to_json(match: MatchResult, guess: InitialGuess | None = None) -> str:
    doc = {"pairs": [[_plain(a), _plain(b)] for a, b in match.pairs], "score": match.score,
           "view2_yaw": match.view2_yaw}
    if guess is not None:
        doc["yaw"] = guess.yaw
        doc["translation"] = guess.translation.tolist()
    return json.dumps(doc, indent=2, sort_keys=True)


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v
