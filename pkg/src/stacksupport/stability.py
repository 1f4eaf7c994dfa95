"""Static equilibrium of stacked rigid bodies and core-supporter extraction."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import plane_basis
from .simplex import phase_one
from .volume import GROUND, ContactGraph, VoxelScene

log = logging.getLogger(__name__)

G = 9.81
DEFAULT_MU = 0.5
DEFAULT_DENSITY = 1000.0
FEAS_TOL = 1e-7


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Body:
    label: int
    mass: float
    centroid: np.ndarray


@dataclass(frozen=True)
class Column:
    contact: int
    pair: tuple
    point: np.ndarray
    direction: np.ndarray
    kind: str


@dataclass
class EquilibriumProblem:
    """``A_eq f + w = 0`` with ``f >= 0``.

    Rows come in blocks of six per body (force then torque about the body
    centroid). Each column is a unit force acting on the second body of its
    contact pair and, reversed, on the first; ground rows are not modelled.
    """

    A_eq: np.ndarray
    w: np.ndarray
    mu: float
    bodies: list
    columns: list
    contacts: list

    @property
    def n_equations(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.A_eq.shape[1]

    def row_block(self, label) -> slice:
        i = [b.label for b in self.bodies].index(label)
        return slice(6 * i, 6 * i + 6)

    def residual(self, f: np.ndarray) -> float:
        return float(np.abs(self.A_eq @ f + self.w).max(initial=0.0))

    def scaled(self, k: float) -> "EquilibriumProblem":
        return EquilibriumProblem(self.A_eq, self.w * k, self.mu, self.bodies, self.columns, self.contacts)


def pyramid_directions(normal: np.ndarray, mu: float) -> list:
    """Normal plus four edges ``n + mu t`` lying on the friction cone."""
    u, v, n = plane_basis(normal)
    dirs = [("normal", n)]
    for name, t in (("+t1", u), ("-t1", -u), ("+t2", v), ("-t2", -v)):
        d = n + mu * t
        dirs.append((name, d / np.linalg.norm(d)))
    return dirs


def assemble_bodies(bodies, contacts, mu: float = DEFAULT_MU, gravity: float = G) -> EquilibriumProblem:
    """Equilibrium system from explicit bodies and contact regions."""
    bodies = sorted(bodies, key=lambda b: b.label)
    if mu < 0:
        raise StabilityError("friction coefficient must be non-negative")
    for b in bodies:
        if not b.mass > 0:
            raise StabilityError(f"object {b.label} has zero volume or mass")
    index = {b.label: i for i, b in enumerate(bodies)}
    cols, blocks = [], []
    for ci, c in enumerate(contacts):
        a, b = c.labels
        for p in c.contact_points:
            for kind, d in pyramid_directions(c.normal, mu):
                col = np.zeros(6 * len(bodies))
                for lab, sign in ((b, 1.0), (a, -1.0)):
                    if lab in index:
                        i = index[lab]
                        body = bodies[i]
                        col[6 * i:6 * i + 3] = sign * d
                        col[6 * i + 3:6 * i + 6] = np.cross(p - body.centroid, sign * d)
                blocks.append(col)
                cols.append(Column(ci, (a, b), np.asarray(p, float), d, kind))
    A = np.column_stack(blocks) if blocks else np.zeros((6 * len(bodies), 0))
    w = np.zeros(6 * len(bodies))
    for i, b in enumerate(bodies):
        w[6 * i + 2] = -b.mass * gravity
    return EquilibriumProblem(A, w, mu, bodies, cols, list(contacts))


def bodies_from_scene(scene: VoxelScene, density: float = DEFAULT_DENSITY) -> list:
    return [Body(l, scene.volume(l) * density, scene.centroid(l)) for l in scene.labels]


def assemble(scene: VoxelScene, contacts: ContactGraph, density: float = DEFAULT_DENSITY,
             mu: float = DEFAULT_MU) -> EquilibriumProblem:
    regions = [r for _, r in sorted(contacts.edges.items()) if r is not None]
    return assemble_bodies(bodies_from_scene(scene, density), regions, mu)


@dataclass(frozen=True)
class StabilityResult:
    stable: bool
    forces: np.ndarray | None
    residual: float

    def __bool__(self):
        return self.stable


def _solve(A: np.ndarray, w: np.ndarray) -> StabilityResult:
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(w))):
        raise StabilityError("equilibrium system contains non-finite entries")
    scale = float(np.abs(w).max(initial=0.0))
    if scale == 0.0:
        return StabilityResult(True, np.zeros(A.shape[1]), 0.0)
    if A.shape[1] == 0:
        return StabilityResult(False, None, scale)
    # round-off from cross products leaves rows that should be exactly zero
    A = np.where(np.abs(A) < 1e-14 * np.abs(A).max(), 0.0, A)
    norms = np.linalg.norm(A, axis=1)
    live = norms[norms > 0]
    if len(live) and live.max() / live.min() > 1e10:
        raise StabilityError(f"ill-conditioned equilibrium rows (norm ratio {live.max() / live.min():.3g})")
    res = phase_one(A, -w / scale, tol=FEAS_TOL)
    if not res.feasible:
        return StabilityResult(False, None, res.infeasibility * scale)
    f = res.x * scale
    return StabilityResult(True, f, float(np.abs(A @ f + w).max()))


def is_stable(p: EquilibriumProblem) -> StabilityResult:
    """Whether non-negative contact forces balance every body's weight."""
    r = _solve(p.A_eq, p.w)
    if r.stable and r.residual > 1e-6 * (1 + np.abs(p.w).max(initial=0.0)):
        raise StabilityError(f"certificate residual {r.residual:.3g} exceeds tolerance")
    return r


def without_support(p: EquilibriumProblem, o1, o2, mode: str = "one_sided") -> np.ndarray:
    """``A_eq`` with the forces ``o1`` exerts on ``o2`` removed."""
    A = p.A_eq.copy()
    hit = [k for k, c in enumerate(p.columns) if set(c.pair) == {o1, o2}]
    if mode == "one_sided":
        rows = p.row_block(o2)
        for k in hit:
            A[rows, k] = 0.0
    elif mode == "symmetric":
        A[:, hit] = 0.0
    else:
        raise StabilityError(f"unknown removal mode {mode!r}")
    return A


@dataclass
class SupportGraph:
    nodes: list
    edges: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {"nodes": [node_name(n) for n in sorted(self.nodes)],
                "edges": [[node_name(a), node_name(b)] for a, b in sorted(self.edges)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_dot(self) -> str:
        names = sorted(node_name(n) for n in self.nodes)
        edges = sorted((node_name(a), node_name(b)) for a, b in self.edges)
        lines = ["digraph support {"]
        lines += [f'  "{n}";' for n in names]
        lines += [f'  "{a}" -> "{b}";' for a, b in edges]
        lines.append("}")
        return "\n".join(lines) + "\n"

    def supporters(self, label) -> list:
        return sorted(a for a, b in self.edges if b == label)


def node_name(label) -> str:
    return "ground" if label == GROUND else str(label)


def core_supporters(scene, contacts, p: EquilibriumProblem, mode: str = "one_sided") -> SupportGraph:
    """Directed edge ``o1 -> o2`` when ``o2``'s support from ``o1`` cannot be removed."""
    labels = [b.label for b in p.bodies]
    graph = SupportGraph([GROUND] + labels)
    pairs = sorted({tuple(c.labels) for c in p.contacts})
    for a, b in pairs:
        for o1, o2 in ((a, b), (b, a)):
            if o2 == GROUND or o2 not in labels:
                continue
            if not _solve(without_support(p, o1, o2, mode), p.w).stable:
                graph.edges.add((o1, o2))
    return graph


def certificate_csv(p: EquilibriumProblem, forces: np.ndarray) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["supporter", "supported", "x", "y", "z", "dx", "dy", "dz", "kind", "magnitude"])
    for c, f in zip(p.columns, forces):
        wr.writerow([node_name(c.pair[0]), node_name(c.pair[1]), *(f"{v:.9g}" for v in c.point),
                     *(f"{v:.9g}" for v in c.direction), c.kind, f"{f:.9g}"])
    return buf.getvalue()


@dataclass
class Analysis:
    problem: EquilibriumProblem
    result: StabilityResult
    graph: SupportGraph | None
    relaxation: list


def analyze_scene(scene: VoxelScene, contacts: ContactGraph, density: float = DEFAULT_DENSITY,
                  mu: float = DEFAULT_MU, mode: str = "one_sided") -> Analysis:
    """Stability with the relaxation ladder; ``graph`` is None when nothing explains the scene."""
    steps = []
    p = assemble(scene, contacts, density, mu)
    r = is_stable(p)
    if not r.stable and any(c.degenerate for c in contacts.edges.values() if c is not None):
        grown = ContactGraph(list(contacts.nodes), {k: (c.grown(2 * scene.voxel_size) if c is not None and c.degenerate else c)
                                                     for k, c in contacts.edges.items()})
        contacts = grown
        steps.append("grow degenerate contacts")
        p = assemble(scene, contacts, density, mu)
        r = is_stable(p)
    if not r.stable:
        steps.append("friction x1.5")
        p = assemble(scene, contacts, density, mu * 1.5)
        r = is_stable(p)
    if not r.stable:
        log.warning("scene not explained: no equilibrium after %s", ", ".join(steps))
        return Analysis(p, r, None, steps)
    return Analysis(p, r, core_supporters(scene, contacts, p, mode), steps)
