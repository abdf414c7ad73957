"""Realizing a finite metric space with a 1-Lipschitz height function as a
truncated inverse system of graphs.

Level i uses the grid Y_i of spacing m^-i anchored at 0.  Its vertices are
pairs (v, U) with v a grid point and U an m^-i-component of the points whose
height lies in the closed star [v - m^-i, v + m^-i]; two such vertices over
neighbouring grid points are joined when their components meet.  A point z
maps to the spot at height u(z) on the edge (or vertex) formed by the
components containing z.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import floor, lcm
from typing import Sequence

import numpy as np

from .builders import attach_collars
from .graph_core import (InverseSystem, LevelGraph, Projection, SubPoint,
                         validate_admissible)
from .metrics import closed_star_owners, dbar_points
from .unionfind import UnionFind


class MetricInputError(ValueError):
    """Input is not a finite metric space with a 1-Lipschitz function."""

    def __init__(self, message: str, pair: tuple | None = None):
        super().__init__(message)
        self.pair = pair


class HypothesisError(ValueError):
    """Components of a height preimage are too large for the requested constant."""

    def __init__(self, message: str, interval: tuple[Fraction, Fraction]):
        super().__init__(message)
        self.interval = interval


def _int_matrix(rows):
    D = 1
    for row in rows:
        for x in row:
            D = lcm(D, x.denominator)
    big = max((abs(x) for row in rows for x in row), default=Fraction(0))
    dtype = np.int64 if big * D * 4 < (1 << 62) else object
    return np.array([[x.numerator * (D // x.denominator) for x in row] for row in rows],
                    dtype=dtype), D


@dataclass(frozen=True)
class FiniteMetricSpace:
    points: tuple[str, ...]
    dist: tuple[tuple[Fraction, ...], ...]
    u: tuple[Fraction, ...]

    def __post_init__(self):
        n = len(self.points)
        if len(set(self.points)) != n:
            raise MetricInputError("point ids must be distinct")
        if len(self.dist) != n or any(len(r) != n for r in self.dist):
            raise MetricInputError(f"distance matrix must be {n}x{n}")
        if len(self.u) != n:
            raise MetricInputError(f"expected {n} height values, got {len(self.u)}")
        self._check()

    @classmethod
    def build(cls, points: Sequence, dist, u) -> "FiniteMetricSpace":
        return cls(tuple(str(p) for p in points),
                   tuple(tuple(Fraction(x) for x in row) for row in dist),
                   tuple(Fraction(x) for x in u))

    def _pair(self, a, b) -> tuple[str, str]:
        return self.points[int(a)], self.points[int(b)]

    def _check(self):
        n = len(self.points)
        if not n:
            return
        A, D = _int_matrix(self.dist)
        diag = np.nonzero(np.diagonal(A))[0]
        if len(diag):
            a = diag[0]
            raise MetricInputError(f"nonzero self-distance at {self.points[a]}", self._pair(a, a))
        asym = np.argwhere(A != A.T)
        if len(asym):
            a, b = asym[0]
            raise MetricInputError(f"asymmetric distance between {self._pair(a, b)}",
                                   self._pair(a, b))
        off = A + np.eye(n, dtype=A.dtype)
        bad = np.argwhere(off <= 0)
        if len(bad):
            a, b = bad[0]
            raise MetricInputError(f"distinct points {self._pair(a, b)} at distance "
                                   f"{self.dist[a][b]}", self._pair(a, b))
        for k in range(n):
            viol = np.argwhere(A > A[:, k][:, None] + A[k, :][None, :])
            if len(viol):
                a, b = viol[0]
                raise MetricInputError(f"triangle inequality fails for {self._pair(a, b)} "
                                       f"via {self.points[k]}", self._pair(a, b))
        H, E = _int_matrix([list(self.u)])
        h = H[0]
        # |u(a) - u(b)| <= d(a, b) over the common denominator D*E
        lhs = np.abs(h[:, None] - h[None, :]) * D
        bad = np.argwhere(lhs > A * E)
        if len(bad):
            a, b = bad[0]
            raise MetricInputError(f"u is not 1-Lipschitz on {self._pair(a, b)}: "
                                   f"|{self.u[a]} - {self.u[b]}| > {self.dist[a][b]}",
                                   self._pair(a, b))

    @property
    def size(self) -> int:
        return len(self.points)

    def diameter(self) -> Fraction:
        return max((x for row in self.dist for x in row), default=Fraction(0))

    def subset_diameter(self, block: Sequence[int]) -> Fraction:
        return max((self.dist[a][b] for a in block for b in block), default=Fraction(0))


def delta_components(X: FiniteMetricSpace, subset: Sequence[int] | None, delta) -> list[list[int]]:
    """Partition of ``subset`` into delta-components, ordered by smallest index."""
    delta = Fraction(delta)
    if delta <= 0:
        raise ValueError("delta must be positive")
    members = sorted(range(X.size) if subset is None else set(subset))
    uf = UnionFind(members)
    for k, a in enumerate(members):
        row = X.dist[a]
        for b in members[k + 1:]:
            if row[b] <= delta:
                uf.union(a, b)
    return sorted((sorted(g) for g in uf.groups()), key=lambda g: g[0])


# Lipschitz-light hypothesis -------------------------------------------------------

def _grid_span(X: FiniteMetricSpace, h: Fraction) -> range:
    lo = floor(min(X.u) / h) - 1
    hi = -floor(-max(X.u) / h) + 1
    return range(lo, hi + 1)


def _star_members(X: FiniteMetricSpace, v: Fraction, h: Fraction) -> list[int]:
    return [z for z, uz in enumerate(X.u) if v - h <= uz <= v + h]


@dataclass
class LightnessReport:
    constant: Fraction | None
    worst_ratio: Fraction
    worst_interval: tuple[Fraction, Fraction] | None
    per_scale: dict[int, Fraction] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.constant is None or self.worst_ratio <= self.constant


def lipschitz_light_check(X: FiniteMetricSpace, C, scales: Sequence[int], m: int = 3) -> LightnessReport:
    """Worst diam(I)-component diameter over diam(I), for I the closed stars of Y_i."""
    C = None if C is None else Fraction(C)
    worst, where = Fraction(0), None
    per_scale = {}
    for i in scales:
        h = Fraction(1, m) ** i
        width = 2 * h
        scale_worst = Fraction(0)
        for k in _grid_span(X, h):
            v = k * h
            members = _star_members(X, v, h)
            if not members:
                continue
            for comp in delta_components(X, members, width):
                r = X.subset_diameter(comp) / width
                scale_worst = max(scale_worst, r)
                if r > worst:
                    worst, where = r, (v - h, v + h)
        per_scale[i] = scale_worst
    return LightnessReport(C, worst, where, per_scale)


# construction ----------------------------------------------------------------------

@dataclass
class _RawLevel:
    level: int
    graph: LevelGraph
    comp_of: dict[int, dict[int, int]]        # grid index -> point -> vertex id
    members: list[frozenset]                   # vertex id -> its component
    edge_of: dict[tuple[int, int], int]


def _raw_level(X: FiniteMetricSpace, m: int, i: int) -> _RawLevel:
    h = Fraction(1, m) ** i
    names, heights, members = [], [], []
    comp_of: dict[int, dict[int, int]] = {}
    for k in _grid_span(X, h):
        v = k * h
        pts = _star_members(X, v, h)
        if not pts:
            continue
        comp_of[k] = {}
        for c, comp in enumerate(delta_components(X, pts, h)):
            vid = len(names)
            names.append(f"{v}#{c}")
            heights.append(v)
            members.append(frozenset(comp))
            for z in comp:
                comp_of[k][z] = vid
    tails, heads, enames = [], [], []
    edge_of: dict[tuple[int, int], int] = {}
    for k in sorted(comp_of):
        if k + 1 not in comp_of:
            continue
        lower = sorted(set(comp_of[k].values()))
        upper = sorted(set(comp_of[k + 1].values()))
        for a in lower:
            for b in upper:
                if members[a] & members[b]:
                    edge_of[(a, b)] = len(tails)
                    tails.append(a)
                    heads.append(b)
                    enames.append(f"{names[a]}>{names[b]}")
    G = LevelGraph(i, m, tuple(names), tuple(heights), tuple(tails), tuple(heads), tuple(enames))
    return _RawLevel(i, G, comp_of, members, edge_of)


def _place(raw: _RawLevel, z: int, height: Fraction) -> SubPoint:
    """The point over ``height`` on the vertex or edge formed by z's components."""
    G = raw.graph
    h = G.edge_length
    q = height / h
    k = floor(q)
    if q == k:
        return SubPoint.at(raw.comp_of[k][z])
    a, b = raw.comp_of[k][z], raw.comp_of[k + 1][z]
    return G.point(raw.edge_of[(a, b)], q - k)


def _project_raw(fine: _RawLevel, coarse: _RawLevel) -> Projection:
    H = fine.graph
    vmap = []
    for w in range(H.n_vertices):
        z = min(fine.members[w])
        p = _place(coarse, z, H.heights[w])
        vmap.append(p)
    emap = []
    h = coarse.graph.edge_length
    for e in range(H.n_edges):
        a, b = H.tails[e], H.heads[e]
        z = min(fine.members[a] & fine.members[b])
        k = floor(H.heights[a] / h)
        E = coarse.edge_of[(coarse.comp_of[k][z], coarse.comp_of[k + 1][z])]
        s = (H.heights[a] - k * h) / H.edge_length
        emap.append((E, int(s)))
    return Projection(tuple(vmap), tuple(emap))


@dataclass
class Factorization:
    system: InverseSystem
    maps: dict[int, tuple[SubPoint, ...]]
    family: str
    lightness: LightnessReport | None = None

    @property
    def top(self) -> int:
        return self.system.top


def factorize(X: FiniteMetricSpace, m: int, i_min: int, i_max: int, C=None,
              collar=None) -> Factorization:
    """Build levels i_min..i_max and the compatible maps f_i.

    With ``C`` given the hypothesis is checked first and a failure names the
    offending interval.  Collars of height ``collar`` (default one base edge)
    complete the raw graphs.
    """
    if m < 2 or i_max < i_min:
        raise ValueError("need m >= 2 and i_min <= i_max")
    if not X.size:
        raise MetricInputError("empty space")
    light = lipschitz_light_check(X, C, range(i_min, i_max + 1), m)
    if not light.ok:
        a, b = light.worst_interval
        raise HypothesisError(f"a component over [{a}, {b}] has diameter ratio "
                              f"{light.worst_ratio} > {light.constant}", (a, b))
    raws = [_raw_level(X, m, i) for i in range(i_min, i_max + 1)]
    projs = [_project_raw(raws[k + 1], raws[k]) for k in range(len(raws) - 1)]
    maps = {r.level: tuple(_place(r, z, X.u[z]) for z in range(X.size)) for r in raws}
    collar = Fraction(1, m) ** i_min if collar is None else Fraction(collar)
    levels, projs = attach_collars([r.graph for r in raws], projs, collar)
    window = (min(X.u), max(X.u))
    sys = InverseSystem(m, tuple(levels), tuple(projs), window, "factorized")
    return Factorization(sys, maps, f"grid of spacing {m}^-i anchored at 0, "
                                    f"levels {i_min}..{i_max}", light)


# verification ----------------------------------------------------------------------

@dataclass
class FactorizationReport:
    admissible: bool
    compatible: bool
    heights_match: bool
    star_ok: bool
    expansion: Fraction | None          # max dbar / dist
    contraction: Fraction | None        # max dist / dbar (None when some dbar is 0)
    distortion: Fraction | None
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.admissible and self.compatible and self.heights_match and self.star_ok
                and self.distortion is not None)

    def as_dict(self) -> dict:
        s = lambda x: None if x is None else str(x)
        return {"ok": self.ok, "admissible": self.admissible, "compatible": self.compatible,
                "heights_match": self.heights_match, "star_ok": self.star_ok,
                "expansion": s(self.expansion), "contraction": s(self.contraction),
                "distortion": s(self.distortion), "violations": self.violations}


def verify_factorization(F: Factorization, X: FiniteMetricSpace) -> FactorizationReport:
    sys = F.system
    bad: list[str] = []
    admissible = validate_admissible(sys).ok
    if not admissible:
        bad.append("system fails admissibility")
    compatible = heights = star = True
    for i, pts in F.maps.items():
        G = sys.graph(i)
        for z, p in enumerate(pts):
            if G.height_of(p) != X.u[z]:
                heights = False
                bad.append(f"height of f_{i}({X.points[z]}) is {G.height_of(p)}, not {X.u[z]}")
            if i < sys.top and sys.project_one(i, F.maps[i + 1][z]) != p:
                compatible = False
                bad.append(f"projection of f_{i + 1}({X.points[z]}) differs from f_{i}")
        h = G.edge_length
        owners = [set(closed_star_owners(G, p)) for p in pts]
        for a in range(X.size):
            for b in range(a + 1, X.size):
                if X.dist[a][b] <= h and not owners[a] & owners[b]:
                    star = False
                    bad.append(f"f_{i} images of {X.points[a]}, {X.points[b]} share no star")
    top_pts = list(F.maps[sys.top])
    db = dbar_points(sys, top_pts)
    expansion = contraction = Fraction(0)
    for a in range(X.size):
        for b in range(a + 1, X.size):
            d, e = X.dist[a][b], db[a][b]
            expansion = max(expansion, e / d)
            if e == 0:
                contraction = None
                bad.append(f"f_{sys.top} identifies {X.points[a]} and {X.points[b]}")
            elif contraction is not None:
                contraction = max(contraction, d / e)
    distortion = None if contraction is None else max(expansion, contraction)
    return FactorizationReport(admissible, compatible, heights, star, expansion, contraction,
                               distortion, bad)
