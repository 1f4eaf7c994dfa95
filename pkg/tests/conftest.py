import logging
import time
from itertools import permutations

import numpy as np
import pytest

from stacksupport.geometry import LabeledPointCloud, Region, RigidTransform
from stacksupport.qsr import normalized_distance
from stacksupport.synth import BoxSpec, sample_box_surface
from stacksupport.volume import FREE, VoxelScene


def boxes_view(boxes, view_id=0, spacing=0.02, label_of=None) -> LabeledPointCloud:
    """Every surface sample of every box, no occlusion, labels = box labels (or ``label_of``)."""
    regions = []
    for b in boxes:
        pts, _ = sample_box_surface(b, spacing)
        regions.append(Region(label_of[b.label] if label_of else b.label, pts))
    regions.sort(key=lambda r: r.label)
    return LabeledPointCloud(tuple(regions), RigidTransform.identity(), view_id)


def voxelize(boxes, vs, shape, state=FREE, origin=(0.0, 0.0, 0.0)) -> VoxelScene:
    """Cells whose centre lies inside a box get its label; everything else ``state``."""
    origin = np.asarray(origin, float)
    grid = np.full(shape, state, dtype=np.int32)
    idx = np.indices(shape).reshape(3, -1).T
    centers = origin + (idx + 0.5) * vs
    for b in boxes:
        inside = b.contains(centers, pad=1e-9)
        grid.reshape(-1)[inside] = b.label
    points = {b.label: centers[grid.reshape(-1) == b.label] for b in boxes}
    return VoxelScene(vs, origin, grid, points)


def three_boxes():
    return [BoxSpec.on_ground(1, (0.2, 0.1, 0.1), (-0.4, 0.05)),
            BoxSpec.on_ground(2, (0.15, 0.25, 0.2), (0.1, 0.3)),
            BoxSpec.on_ground(3, (0.3, 0.12, 0.15), (0.35, -0.35))]


def brute_force_scores(g1, g2):
    """Variance of normalized distances for every candidate, computed pair by pair."""
    swap = len(g1) < len(g2)
    big, small = (g2, g1) if swap else (g1, g2)
    out = {}
    for perm in permutations(big.labels, len(small)):
        pairs = list(zip(small.labels, perm)) if swap else list(zip(perm, small.labels))
        d = [normalized_distance(g1.tile(a1, b1), g2.tile(a2, b2))
             for a1, a2 in pairs for b1, b2 in pairs if a1 != b1]
        out[tuple(sorted(pairs))] = float(np.var(d))
    return out


def truth_pairs(rendered, k=1):
    t0 = {t: v for v, t in rendered.label_truth[0].items()}
    return tuple(sorted((t0[t], v) for v, t in rendered.label_truth[k].items() if t in t0))


@pytest.fixture(autouse=True)
def _quiet_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="stacksupport")
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict = {}


class Criterion:
    """Records one acceptance line: outcome, elapsed time and a short detail."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number} {status} ({self.elapsed():.1f}s) {self.title}"
        ACCEPTANCE[self.number] = line + (f": {self.detail}" if self.detail else "")
        print(ACCEPTANCE[self.number])
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
