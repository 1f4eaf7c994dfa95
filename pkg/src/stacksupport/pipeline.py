"""End-to-end driver: labeled views -> registration -> voxels -> support graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import stability, volume
from .geometry import LabeledPointCloud, Region, RigidTransform, region_centroid, rot_z
from .matching import InitialGuess, MatchResult, candidate_matches, estimate_initial_transform
from .registration import ICPConfig, RegistrationError, RegistrationResult, TargetIndex, icp, median_spacing

log = logging.getLogger(__name__)

# hypothesis scoring: voxels of margin around the reference, the capped cost
# (fraction of the squared cutoff) of a point in unobserved space, and the
# cutoff in point spacings
SPACE_MARGIN = 8
HIDDEN_COST = 0.25
SCORE_CUT = 3.0


def objects_only(view: LabeledPointCloud) -> LabeledPointCloud:
    """Drop ground-labelled points."""
    regs = tuple(r for r in view.regions if r.label != volume.GROUND)
    return LabeledPointCloud(regs, view.view_pose, view.view_id)


@dataclass
class PairRegistration:
    view: object
    match: MatchResult
    guess: InitialGuess
    result: RegistrationResult
    # view label -> canonical label, filled in by register_views
    labels: dict | None = None
    # visibility-aware hypothesis score (mean cost over probe points)
    score: float = float("nan")


def _centred_guess(yaw: float, a: LabeledPointCloud, b: LabeledPointCloud, pairs) -> InitialGuess:
    c1 = np.mean([region_centroid(a.region(x)) for x, _ in pairs], axis=0)
    c2 = np.mean([region_centroid(b.region(y)) for _, y in pairs], axis=0)
    return InitialGuess(yaw, c1 - rot_z(yaw) @ c2)


def observed_space(views, transforms=None, spacing: float | None = None) -> volume.VoxelScene:
    """Free / hidden / occupied voxels seen from ``views``, at twice the point spacing."""
    if spacing is None:
        pts = np.vstack([objects_only(v).all_points()[0] for v in views])
        spacing = median_spacing(pts)
    return volume.carve(views, transforms, 2.0 * spacing, margin=SPACE_MARGIN)


def register_pair(ref: LabeledPointCloud, view: LabeledPointCloud, cfg: ICPConfig | None = None,
                  yaw_hypotheses: int = 8, match_hypotheses: int = 6,
                  probe_points: int = 4000, probe_iterations: int = 20, refine_hypotheses: int = 3,
                  ref_space: volume.VoxelScene | None = None) -> PairRegistration:
    """Match objects, seed ICP with the qualitative guess and refine ``view`` onto ``ref``.

    Each of the ``match_hypotheses`` best object matchings is tried. ICP
    starts from that matching's guess and from the guessed yaw plus
    multiples of ``2 pi / yaw_hypotheses``, with correspondences restricted
    to matched objects. The run with the lowest visibility-aware score wins
    (earliest hypothesis on ties): view points landing where the reference
    cameras saw free space cost the full cutoff, points in space they never
    saw cost at most ``HIDDEN_COST`` of it, and the rest their truncated
    distance to same-label reference points. ``ref_space`` is the carved
    reference (built from ``ref`` and its camera when omitted). Hypotheses are
    scored on an evenly strided subset of at most ``probe_points`` view
    points, with probe runs stopped after ``probe_iterations`` steps; the
    best ``refine_hypotheses`` are refined on all points and rescored.
    """
    a, b = objects_only(ref), objects_only(view)
    cfg = cfg or ICPConfig()
    dst, dst_lab = a.all_points()
    dst_lab = np.asarray(dst_lab)
    src, src_lab = b.all_points()
    index = TargetIndex(dst, dst_lab)
    # a fused reference interleaves samples, so its own spacing understates the noise scale
    spacing = max(index.spacing, median_spacing(src))
    if ref_space is None:
        ref_space = observed_space([ref], spacing=spacing)
    probe_cfg = ICPConfig(min(cfg.max_iterations, probe_iterations), cfg.convergence_delta, cfg.correspondence_cutoff)
    probe = np.arange(0, len(src), max(1, -(-len(src) // probe_points)))
    trials = []
    for m in candidate_matches(a, b, max(1, match_hypotheses)):
        guess = estimate_initial_transform(m, a, b)
        to_ref = {y: x for x, y in m.pairs}
        # unmatched objects of the new view carry a label no reference point has
        lab = np.array([to_ref.get(l, -1) for l in src_lab])
        for k in range(max(1, yaw_hypotheses)):
            seed = guess if k == 0 else _centred_guess(guess.yaw + 2 * np.pi * k / yaw_hypotheses, a, b, m.pairs)
            try:
                res = icp(src[probe], dst, seed, probe_cfg, lab[probe], dst_lab, index)
            except RegistrationError:
                continue
            score = _visibility_score(res.transform.apply(src[probe]), lab[probe], index, ref_space, spacing)
            trials.append((score, len(trials), m, guess, res, lab))
    if not trials:
        raise RegistrationError("registration diverged")
    trials.sort(key=lambda t: t[:2])
    best = None
    for _, order, m, guess, res, lab in trials[:max(1, refine_hypotheses)]:
        res = icp(src, dst, res.transform, cfg, lab, dst_lab, index)
        score = _visibility_score(res.transform.apply(src), lab, index, ref_space, spacing)
        if best is None or score < best[0] - 1e-15:
            best = (score, m, guess, res)
    score, m, guess, res = best
    return PairRegistration(view.view_id, m, guess, res, score=score)


def _visibility_score(moved, lab, index: TargetIndex, space: volume.VoxelScene, spacing) -> float:
    # the cutoff sits well above the noise floor, so a point placed correctly
    # costs less than one dropped into unseen space
    cut = SCORE_CUT * spacing
    d = np.full(len(moved), cut)
    for l in np.unique(lab):
        if l in index.by_label:
            sel = lab == l
            d[sel] = np.minimum(index.by_label[l][1].query(moved[sel], distance_upper_bound=cut)[0], cut)
    cost = d ** 2
    idx = np.floor((moved - space.origin) / space.voxel_size).astype(int)
    inside = np.all((idx >= 0) & (idx < np.array(space.shape)), axis=1)
    state = np.full(len(moved), volume.FREE)
    state[inside] = space.grid[tuple(idx[inside].T)]
    cost[state == volume.HIDDEN] = np.minimum(cost[state == volume.HIDDEN], HIDDEN_COST * cut ** 2)
    cost[state == volume.FREE] = cut ** 2
    return float(np.mean(cost))


def merge_clouds(a: LabeledPointCloud, b: LabeledPointCloud) -> LabeledPointCloud:
    parts: dict = {}
    for c in (a, b):
        for r in c.regions:
            parts.setdefault(r.label, []).append(r.points)
    regs = tuple(Region(l, np.vstack(p)) for l, p in sorted(parts.items()))
    return LabeledPointCloud(regs, a.view_pose, a.view_id)


def register_views(views, cfg: ICPConfig | None = None, refine_sweeps: int = 1) -> list:
    """Register every view into the frame of ``views[0]``; one result per later view, in order.

    Views join the fused reference greedily: each round registers every
    remaining view against it and keeps the one with the best
    visibility-aware score, so views facing away from the reference join
    after their neighbours. Matched labels take the reference (canonical)
    label and unmatched ones get fresh labels. Each refinement sweep then
    re-fits every view against all the others, starting from its current
    transform, and keeps the re-fit only when its visibility-aware score
    improves.
    """
    fused = objects_only(views[0])
    nxt = max([int(l) for l in views[0].labels] + [0]) + 1
    done: dict = {}
    placed = [(views[0], RigidTransform.identity())]
    remaining = list(range(1, len(views)))
    while remaining:
        space = observed_space([w for w, _ in placed], [T for _, T in placed])
        trials = [(register_pair(fused, views[i], cfg, ref_space=space), i) for i in remaining]
        reg, i = min(trials, key=lambda t: (t[0].score, t[1]))
        remaining.remove(i)
        v = views[i]
        placed.append((v, reg.result.transform))
        mapping = {b: a for a, b in reg.match.pairs}
        for l in objects_only(v).labels:
            if l not in mapping:
                mapping[l] = nxt
                nxt += 1
        reg.labels = mapping
        done[i] = reg
        moved, _ = relabel(objects_only(v).transformed(reg.result.transform), mapping, nxt)
        fused = merge_clouds(fused, moved)
    regs = [done[i] for i in range(1, len(views))]
    for _ in range(refine_sweeps if len(views) > 2 else 0):
        for k, reg in enumerate(regs):
            others = [(views[0], RigidTransform.identity())] + [
                (views[j + 1], r.result.transform) for j, r in enumerate(regs) if j != k]
            ref = objects_only(views[0])
            for j, r in enumerate(regs):
                if j != k:
                    ref = merge_clouds(ref, relabel(objects_only(views[j + 1]).transformed(r.result.transform),
                                                    r.labels, nxt)[0])
            dst, dst_lab = ref.all_points()
            src, src_lab = objects_only(views[k + 1]).all_points()
            lab = np.array([reg.labels[l] for l in src_lab])
            index = TargetIndex(dst, np.asarray(dst_lab))
            spacing = max(index.spacing, median_spacing(src))
            space = observed_space([w for w, _ in others], [T for _, T in others], spacing=spacing)
            try:
                res = icp(src, dst, reg.result.transform, cfg, lab, np.asarray(dst_lab), index)
            except RegistrationError:
                continue
            before = _visibility_score(reg.result.transform.apply(src), lab, index, space, spacing)
            after = _visibility_score(res.transform.apply(src), lab, index, space, spacing)
            # keep a re-fit only if it is more consistent with what the other views saw
            if after < before:
                reg.result = res
    return regs


def relabel(view: LabeledPointCloud, mapping: dict, fresh_start: int) -> tuple[LabeledPointCloud, int]:
    """Rename labels of ``view`` via ``mapping``; unmapped object labels get fresh ids."""
    regs = []
    nxt = fresh_start
    for r in view.regions:
        if r.label == volume.GROUND:
            regs.append(r)
        elif r.label in mapping:
            regs.append(Region(mapping[r.label], r.points))
        else:
            regs.append(Region(nxt, r.points))
            nxt += 1
    return LabeledPointCloud(tuple(regs), view.view_pose, view.view_id), nxt


def canonical_views(views, registrations) -> list:
    """Views moved into the reference frame with matched labels unified."""
    out = [views[0]]
    nxt = max([int(l) for l in views[0].labels] + [0]) + 1
    for v, reg in zip(views[1:], registrations):
        mapping = reg.labels if reg.labels is not None else {b: a for a, b in reg.match.pairs}
        moved, nxt = relabel(v.transformed(reg.result.transform), mapping, max([nxt] + [x + 1 for x in mapping.values()]))
        out.append(moved)
    return out


@dataclass
class SceneAnalysis:
    scene: volume.VoxelScene
    contacts: volume.ContactGraph
    analysis: stability.Analysis

    @property
    def explained(self) -> bool:
        return self.analysis.graph is not None


def analyze_views(views, transforms=None, voxel_size: float | None = None,
                  mu: float = stability.DEFAULT_MU, density: float = stability.DEFAULT_DENSITY,
                  mode: str = "one_sided") -> SceneAnalysis:
    """Carve, complete and test stability of views already sharing labels."""
    scene = volume.carve(views, transforms, voxel_size)
    scene = volume.complete_all(scene)
    contacts = volume.contact_graph(scene)
    return SceneAnalysis(scene, contacts, stability.analyze_scene(scene, contacts, density, mu, mode))


def full_pipeline(views, voxel_size=None, mu=stability.DEFAULT_MU, density=stability.DEFAULT_DENSITY,
                  cfg: ICPConfig | None = None) -> tuple[SceneAnalysis, list]:
    if len(views) > 1:
        regs = register_views(views, cfg)
        views = canonical_views(views, regs)
    else:
        regs = []
    return analyze_views(views, None, voxel_size, mu, density), regs
