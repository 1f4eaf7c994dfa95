"""Qualitative relations between ground-projected bounding rectangles.

Interval relations refine Allen's algebra with interval centre points. An
endpoint that falls inside the other interval is classified only by the side
of that interval's centre it lies on (centre itself counts as the far side),
except for containment, where coincident centres form their own relation.
This yields 27 relations closed under converse and mirror reflection:

    b m eq | lol mol lom mom | ls ms | lf mf | ld cd hd     (+ converses)

Rectangle tiles live on the 4x4 grid spanned by the reference rectangle's
low, centre and high lines. Grid lines are numbered 0..4 from the south-west
corner, zones 1..4 between them.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import MBR2

DEFAULT_REL_EPS = 1e-9

BASE_NAMES = ("b", "m", "lol", "mol", "lom", "mom", "ls", "ms", "lf", "mf", "ld", "cd", "hd")
# names drawn from the published relation table; the rest are systematic
PUBLISHED_NAMES = frozenset({"lol", "mol", "lom", "mom", "ms", "ls", "hd", "cd",
                         "loli", "moli", "lomi", "momi", "msi", "lsi", "hdi", "cdi", "eq", "b", "m"})


class QSRError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise QSRError(f"interval lo > hi: {self.lo} > {self.hi}")

    @property
    def center(self) -> float:
        return (self.lo + self.hi) / 2

    @property
    def points(self) -> tuple[float, float, float]:
        return (self.lo, self.center, self.hi)

    def reflected(self) -> "Interval":
        return Interval(-self.hi, -self.lo)


@dataclass(frozen=True)
class EIARelation:
    """An interval relation; ``signature`` is the full 9-sign comparison of a
    generic representative ``(a_lo, a_c, a_hi)`` vs ``(b_lo, b_c, b_hi)``."""

    name: str
    signature: tuple = ()

    def __eq__(self, other):
        if isinstance(other, EIARelation):
            return self.name == other.name
        if isinstance(other, str):
            return self.name == other
        return NotImplemented

    def __hash__(self):
        return hash(self.name)

    def __str__(self):
        return self.name

    @property
    def is_published(self) -> bool:
        return self.name in PUBLISHED_NAMES


@dataclass(frozen=True)
class ERARelation:
    x_rel: EIARelation
    y_rel: EIARelation

    def __iter__(self):
        return iter((self.x_rel, self.y_rel))

    def __str__(self):
        return f"({self.x_rel}, {self.y_rel})"


def _sign(x: float, y: float, eps: float) -> str:
    if x < y - eps:
        return "<"
    if x > y + eps:
        return ">"
    return "="


def signature(a: Interval, b: Interval, eps: float = 0.0) -> tuple:
    return tuple(_sign(p, q, eps) for p in a.points for q in b.points)


def _eps_for(a: Interval, b: Interval, rel_eps: float) -> float:
    return rel_eps * max(a.hi - a.lo, b.hi - b.lo)


def _classify(a_lo, a_c, a_hi, b_lo, b_c, b_hi, eps) -> str:
    def s(x, y):
        return _sign(x, y, eps)

    if s(a_hi, b_lo) == "<":
        return "b"
    if s(a_hi, b_lo) == "=":
        return "m"
    if s(a_lo, b_hi) == ">":
        return "bi"
    if s(a_lo, b_hi) == "=":
        return "mi"
    ll, hh = s(a_lo, b_lo), s(a_hi, b_hi)
    if ll == "=" and hh == "=":
        return "eq"
    if ll == "<" and hh == "<":
        first = "l" if s(a_c, b_lo) == "<" else "m"
        last = "l" if s(a_hi, b_c) == "<" else "m"
        return first + "o" + last
    if ll == "=" and hh == "<":
        return ("l" if s(a_hi, b_c) == "<" else "m") + "s"
    if ll == ">" and hh == "=":
        return ("l" if s(a_lo, b_c) == ">" else "m") + "f"
    if ll == ">" and hh == "<":
        return {"<": "ld", "=": "cd", ">": "hd"}[s(a_c, b_c)]
    # a is the container / later interval: name by the converse
    return _classify(b_lo, b_c, b_hi, a_lo, a_c, a_hi, eps) + "i"


def classify(a: Interval, b: Interval, eps: float = 0.0) -> str:
    return _classify(a.lo, a.center, a.hi, b.lo, b.center, b.hi, eps)


def eia_of(a: Interval, b: Interval, rel_eps: float = DEFAULT_REL_EPS) -> EIARelation:
    """Relation of interval ``a`` against reference ``b``."""
    if not (a.lo < a.hi and b.lo < b.hi):
        raise QSRError("interval relations need non-degenerate intervals")
    name = classify(a, b, _eps_for(a, b, rel_eps))
    return relation(name)


def era_of(a: MBR2, b: MBR2, rel_eps: float = DEFAULT_REL_EPS) -> ERARelation:
    return ERARelation(eia_of(Interval(a.x_lo, a.x_hi), Interval(b.x_lo, b.x_hi), rel_eps),
                       eia_of(Interval(a.y_lo, a.y_hi), Interval(b.y_lo, b.y_hi), rel_eps))


def _placements(n: int = 12):
    """All pairs of intervals with endpoints on an even integer grid (centres land on integers)."""
    pts = range(0, 2 * n, 2)
    for a_lo, a_hi in itertools.combinations(pts, 2):
        for b_lo, b_hi in itertools.combinations(pts, 2):
            yield Interval(a_lo, a_hi), Interval(b_lo, b_hi)


@lru_cache(maxsize=None)
def _catalogue() -> dict:
    """name -> (generic representative pair, its signature)."""
    best: dict = {}
    for a, b in _placements():
        name = classify(a, b)
        sig = signature(a, b)
        ties = sig.count("=")
        if name not in best or ties < best[name][0]:
            best[name] = (ties, (a, b), sig)
    return {k: (v[1], v[2]) for k, v in best.items()}


@lru_cache(maxsize=None)
def relation(name: str) -> EIARelation:
    cat = _catalogue()
    if name not in cat:
        raise QSRError(f"unknown interval relation {name!r}")
    return EIARelation(name, cat[name][1])


def enumerate_basic_relations() -> frozenset:
    """Every relation realised by some pair of non-degenerate intervals."""
    return frozenset(relation(name) for name in _catalogue())


def enumerate_signatures() -> frozenset:
    """Distinct raw 9-sign signatures (finer than the relation set)."""
    return frozenset(signature(a, b) for a, b in _placements())


def inverse(r: EIARelation | str) -> EIARelation:
    name = str(r)
    if name == "eq":
        return relation("eq")
    if name in BASE_NAMES:
        return relation(name + "i")
    return relation(name[:-1])


@lru_cache(maxsize=None)
def _symm_table() -> dict:
    table = {}
    for name, ((a, b), _) in _catalogue().items():
        table[name] = classify(a.reflected(), b.reflected())
    return table


def symm(r: EIARelation | str) -> EIARelation:
    """Mirror image of a relation (both intervals reflected about the origin)."""
    return relation(_symm_table()[str(r)])


def rotate_era_quarter(r: ERARelation, direction: str = "cw") -> ERARelation:
    """ERA after a quarter-turn of the viewpoint.

    A clockwise view change maps scene coordinates ``(x, y) -> (-y, x)``.
    """
    if direction == "cw":
        return ERARelation(symm(r.y_rel), r.x_rel)
    if direction == "ccw":
        return ERARelation(r.y_rel, symm(r.x_rel))
    raise QSRError(f"direction must be 'cw' or 'ccw', got {direction!r}")


# ---------------------------------------------------------------- neighbourhood graph

@dataclass(frozen=True)
class NeighborhoodGraph:
    nodes: frozenset
    edges: frozenset

    def has_edge(self, u, v) -> bool:
        return frozenset((str(u), str(v))) in self.edges

    def neighbors(self, u) -> set:
        u = str(u)
        return {next(iter(e - {u})) for e in self.edges if u in e}

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        start = next(iter(self.nodes))
        seen, todo = {start}, deque([start])
        while todo:
            for v in self.neighbors(todo.popleft()):
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        return seen == set(self.nodes)

    def is_symm_invariant(self) -> bool:
        mapped = {frozenset(str(symm(n)) for n in e) for e in self.edges}
        return mapped == set(self.edges)

    def to_dict(self) -> dict:
        return {"nodes": sorted(self.nodes),
                "edges": sorted(sorted(e) for e in self.edges)}


def _rect_corners(cx, cy, hw, hh, phi):
    c, s = np.cos(phi), np.sin(phi)
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    R = np.array([[c, -s], [s, c]])
    return local @ R.T + [cx, cy]


def _sweep_pairs(rng: np.random.Generator, n_random: int):
    pairs = []
    for _ in range(n_random):
        a = (*rng.uniform(-2, 2, 2), *rng.uniform(0.1, 1.5, 2), rng.uniform(0, np.pi))
        b = (*rng.uniform(-2, 2, 2), *rng.uniform(0.1, 1.5, 2), rng.uniform(0, np.pi))
        pairs.append((a, b))
    # concentric pairs pass through cd / eq / cdi
    for _ in range(max(4, n_random // 8)):
        c = rng.uniform(-1, 1, 2)
        w, h = rng.uniform(0.2, 1.5, 2)
        pairs.append(((*c, w, h, 0.0), (*c, h, w, 0.0)))
        pairs.append(((*c, w, h, rng.uniform(0, np.pi)), (*c, *rng.uniform(0.2, 1.5, 2), rng.uniform(0, np.pi))))
    return [(_rect_corners(*a), _rect_corners(*b)) for a, b in pairs]


def _x_relation(ca: np.ndarray, cb: np.ndarray, theta: float, eps: float) -> str:
    c, s = np.cos(theta), np.sin(theta)
    xa = ca[:, 0] * c - ca[:, 1] * s
    xb = cb[:, 0] * c - cb[:, 1] * s
    a_lo, a_hi, b_lo, b_hi = xa.min(), xa.max(), xb.min(), xb.max()
    return _classify(a_lo, (a_lo + a_hi) / 2, a_hi, b_lo, (b_lo + b_hi) / 2, b_hi, eps)


def neighborhood_graph(step_deg: float = 0.1, n_pairs: int = 24, seed: int = 0,
                       sweep_eps: float = 1e-12, event_eps: float = 1e-8) -> NeighborhoodGraph:
    """Conceptual neighbourhood graph from rotating rectangle pairs.

    Each pair is swept through a full turn. A change between consecutive
    steps is bisected down to an event; the relation at the event itself is
    read with tolerance ``event_eps`` (``sweep_eps`` elsewhere, absorbing
    round-off in exactly coincident centres) so that instantaneous relations (meets,
    starts, coincident centres) become graph nodes between their neighbours.
    Only the x axis is swept: after a half turn the x relation is the mirror
    image, and the y axis is the x axis a quarter turn later.
    """
    rng = np.random.default_rng(seed)
    n_steps = int(round(360.0 / step_deg))
    thetas = np.radians(np.arange(n_steps + 1) * step_deg)
    nodes, edges = set(), set()

    def add_edge(u, v):
        if u != v:
            edges.add(frozenset((u, v)))

    for ca, cb in _sweep_pairs(rng, n_pairs):
        rels = [_x_relation(ca, cb, t, sweep_eps) for t in thetas]
        nodes.update(rels)

        def events(t0, r0, t1, r1):
            if r0 == r1:
                return
            if t1 - t0 < 1e-11:
                mid = _x_relation(ca, cb, (t0 + t1) / 2, event_eps)
                nodes.add(mid)
                add_edge(r0, mid)
                add_edge(mid, r1)
                return
            tm = (t0 + t1) / 2
            rm = _x_relation(ca, cb, tm, sweep_eps)
            events(t0, r0, tm, rm)
            events(tm, rm, t1, r1)

        for i in range(n_steps):
            events(thetas[i], rels[i], thetas[i + 1], rels[i + 1])
    return NeighborhoodGraph(frozenset(nodes), frozenset(edges))


@lru_cache(maxsize=None)
def default_neighborhood_graph() -> NeighborhoodGraph:
    return neighborhood_graph()


# ---------------------------------------------------------------- direction tiles

@dataclass(frozen=True, order=True)
class ERCDRTile:
    """Contiguous block of zones ``x_span`` x ``y_span`` (each 1..4)."""

    x_span: tuple
    y_span: tuple

    def __post_init__(self):
        for lo, hi in (self.x_span, self.y_span):
            if not (1 <= lo <= hi <= 4):
                raise QSRError(f"invalid zone span {(lo, hi)}")
        object.__setattr__(self, "x_span", tuple(int(v) for v in self.x_span))
        object.__setattr__(self, "y_span", tuple(int(v) for v in self.y_span))

    @property
    def x_lines(self) -> tuple[int, int]:
        return (self.x_span[0] - 1, self.x_span[1])

    @property
    def y_lines(self) -> tuple[int, int]:
        return (self.y_span[0] - 1, self.y_span[1])

    @property
    def index(self) -> int:
        return _SPAN_INDEX[self.x_span] * 10 + _SPAN_INDEX[self.y_span]

    @property
    def name(self) -> str:
        return ":".join(_TILE_NAMES[(x, y)] for y in range(self.y_span[1], self.y_span[0] - 1, -1)
                        for x in range(self.x_span[0], self.x_span[1] + 1))

    def __str__(self):
        return self.name


SPANS = tuple((lo, hi) for lo in range(1, 5) for hi in range(lo, 5))
_SPAN_INDEX = {s: i for i, s in enumerate(SPANS)}
_ROW_NAMES = {4: "N", 3: "MN", 2: "MS", 1: "S"}
_TILE_NAMES = {}
for _x in range(1, 5):
    for _y in range(1, 5):
        if _x in (2, 3) and _y in (2, 3):
            _TILE_NAMES[(_x, _y)] = "I" + ("N" if _y == 3 else "S") + ("W" if _x == 2 else "E")
        elif _y in (1, 4) and _x in (1, 4):
            _TILE_NAMES[(_x, _y)] = ("N" if _y == 4 else "S") + ("W" if _x == 1 else "E")
        elif _y in (1, 4):
            _TILE_NAMES[(_x, _y)] = ("N" if _y == 4 else "S") + "M" + ("W" if _x == 2 else "E")
        else:
            _TILE_NAMES[(_x, _y)] = ("W" if _x == 1 else "E") + "M" + ("N" if _y == 3 else "S")


def all_tiles() -> tuple:
    return tuple(ERCDRTile(x, y) for x in SPANS for y in SPANS)


def _zone_lo(v: float, lines) -> int:
    return 1 + sum(v >= line for line in lines)


def _zone_hi(v: float, lines) -> int:
    return 1 + sum(v > line for line in lines)


def _span(lo: float, hi: float, ref_lo: float, ref_hi: float) -> tuple[int, int]:
    lines = (ref_lo, (ref_lo + ref_hi) / 2, ref_hi)
    zl, zh = _zone_lo(lo, lines), _zone_hi(hi, lines)
    return (zl, max(zl, zh))


def ercdr_of(a: MBR2, b: MBR2) -> ERCDRTile:
    """Tile covered by rectangle ``a`` on the grid of reference ``b``.

    Low edges are binned half-open upward ``[line, next)``, high edges
    half-open downward ``(prev, line]`` so that ``a == b`` covers exactly
    the four inner tiles.
    """
    if b.x_lo >= b.x_hi or b.y_lo >= b.y_hi:
        raise QSRError("reference rectangle must be non-degenerate")
    return ERCDRTile(_span(a.x_lo, a.x_hi, b.x_lo, b.x_hi), _span(a.y_lo, a.y_hi, b.y_lo, b.y_hi))


@dataclass(frozen=True)
class DirectionalProperty:
    hdp: str
    vdp: str


def _majority(lo: int, hi: int, low_name: str, high_name: str) -> str:
    low = sum(1 for z in range(lo, hi + 1) if z <= 2)
    high = (hi - lo + 1) - low
    if low == high:
        return "M"
    return low_name if low > high else high_name


def tile_directional_property(t: ERCDRTile) -> DirectionalProperty:
    return DirectionalProperty(_majority(*t.x_span, "W", "E"), _majority(*t.y_span, "S", "N"))


TRENDS = {
    "south_to_north": (0, 1),
    "east_to_west": (-1, 0),
    "north_to_south": (0, -1),
    "west_to_east": (1, 0),
    "none": (0, 0),
}
_REVERSED = {"south_to_north": "north_to_south", "north_to_south": "south_to_north",
             "east_to_west": "west_to_east", "west_to_east": "east_to_west", "none": "none"}


def change_trend(dp: DirectionalProperty, rotation: str = "cw") -> str:
    h, v = dp.hdp, dp.vdp
    if h == "E" and v in ("S", "M"):
        trend = "south_to_north"
    elif h in ("E", "M") and v == "N":
        trend = "east_to_west"
    elif h == "W" and v in ("N", "M"):
        trend = "north_to_south"
    elif h in ("W", "M") and v == "S":
        trend = "west_to_east"
    else:
        trend = "none"
    if rotation == "cw":
        return trend
    if rotation == "ccw":
        return _REVERSED[trend]
    raise QSRError(f"rotation must be 'cw' or 'ccw', got {rotation!r}")


def _displacement(t1: ERCDRTile, t2: ERCDRTile) -> tuple[int, int]:
    dx = (t2.x_lines[1] - t1.x_lines[1]) + (t2.x_lines[0] - t1.x_lines[0])
    dy = (t2.y_lines[1] - t1.y_lines[1]) + (t2.y_lines[0] - t1.y_lines[0])
    return dx, dy


def tile_distance(t1: ERCDRTile, t2: ERCDRTile, rotation_direction: str = "cw") -> int:
    """Signed line-lifting distance from ``t1`` to ``t2``.

    Positive when the displacement follows the change trend of ``t1``,
    negative when it runs against it; displacement orthogonal to the trend,
    or a trendless ``t1``, keeps the positive magnitude.
    """
    dx, dy = _displacement(t1, t2)
    mag = abs(dx) + abs(dy)
    if mag == 0:
        return 0
    tx, ty = TRENDS[change_trend(tile_directional_property(t1), rotation_direction)]
    return -mag if dx * tx + dy * ty < 0 else mag


def rotate_tile(t: ERCDRTile, quarters: int = 1) -> ERCDRTile:
    """Tile after ``quarters`` clockwise view changes of pi/2."""
    for _ in range(quarters % 4):
        t = ERCDRTile((5 - t.y_span[1], 5 - t.y_span[0]), t.x_span)
    return t


def quarter_distance(t: ERCDRTile) -> int:
    return abs(tile_distance(t, rotate_tile(t)))


def normalized_distance_parts(t1: ERCDRTile, t2: ERCDRTile,
                              rotation_direction: str = "cw") -> tuple[int, int, float]:
    """``(base, d(argmin, t2), d_norm)``."""
    dists = [tile_distance(rotate_tile(t1, k), t2, rotation_direction) for k in range(4)]
    base = min(range(4), key=lambda k: abs(dists[k]))
    return base, dists[base], base + (dists[base] + 1) / (quarter_distance(t1) + 1)


def normalized_distance(t1: ERCDRTile, t2: ERCDRTile, rotation_direction: str = "cw") -> float:
    return normalized_distance_parts(t1, t2, rotation_direction)[2]


@lru_cache(maxsize=1)
def normalized_distance_table() -> np.ndarray:
    """100 x 100 lookup indexed by ``ERCDRTile.index``."""
    tiles = all_tiles()
    table = np.empty((100, 100))
    for t1 in tiles:
        for t2 in tiles:
            table[t1.index, t2.index] = normalized_distance(t1, t2)
    return table


@lru_cache(maxsize=1)
def abs_distance_table() -> np.ndarray:
    tiles = all_tiles()
    table = np.empty((100, 100), dtype=int)
    for t1 in tiles:
        for t2 in tiles:
            table[t1.index, t2.index] = abs(tile_distance(t1, t2))
    return table


def tables_json(graph: NeighborhoodGraph | None = None) -> str:
    """Relation tables and neighbourhood graph as a JSON document."""
    rels = sorted(enumerate_basic_relations(), key=lambda r: r.name)
    doc = {
        "interval_relations": [
            {"name": r.name, "signature": "".join(r.signature), "inverse": inverse(r).name,
             "symm": symm(r).name, "source": "published" if r.is_published else "systematic"}
            for r in rels
        ],
        "tiles": [{"name": t.name, "x_span": list(t.x_span), "y_span": list(t.y_span),
                   "quarter_distance": quarter_distance(t)} for t in all_tiles()],
    }
    if graph is not None:
        doc["neighborhood_graph"] = graph.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True)
