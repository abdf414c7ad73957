"""Directed level graphs, subdivisions, projections and inverse systems.

A level graph at level ``i`` has every edge of length ``m**-i``; edges are
directed from the lower to the higher endpoint and ``heights`` stores the
height function exactly.  Parallel edges are distinct edge ids.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import gcd
from typing import Iterator, NamedTuple, Sequence


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SubPoint:
    """A point of a level graph.

    Either a vertex (``edge is None``) or the point at fraction ``t`` along a
    directed edge, with ``0 < t < 1``.  Use :meth:`LevelGraph.point` to build
    edge points so that endpoints collapse to vertex carriers.
    """

    vertex: int | None = None
    edge: int | None = None
    t: Fraction = Fraction(0)

    @classmethod
    def at(cls, v: int) -> "SubPoint":
        return cls(vertex=v)

    @property
    def is_vertex(self) -> bool:
        return self.edge is None

    def depth(self, m: int) -> int:
        if self.edge is None:
            return 0
        d, q = 0, self.t.denominator
        while q > 1:
            g = gcd(q, m)
            if g == 1:
                raise GraphError(f"fraction {self.t} is not m-adic for m={m}")
            q //= g
            d += 1
        return d

    def sort_key(self):
        if self.edge is None:
            return (0, self.vertex, Fraction(0))
        return (1, self.edge, self.t)

    def __repr__(self):
        if self.edge is None:
            return f"SubPoint(v={self.vertex})"
        return f"SubPoint(e={self.edge}, t={self.t})"


@dataclass(frozen=True)
class LevelGraph:
    level: int
    m: int
    vertex_names: tuple[str, ...]
    heights: tuple[Fraction, ...]
    tails: tuple[int, ...]
    heads: tuple[int, ...]
    edge_names: tuple[str, ...]

    def __post_init__(self):
        if self.m < 2:
            raise GraphError("base m must be at least 2")
        if len(self.vertex_names) != len(self.heights):
            raise GraphError("one height per vertex required")
        if not (len(self.tails) == len(self.heads) == len(self.edge_names)):
            raise GraphError("edge arrays disagree in length")
        if len(set(self.vertex_names)) != len(self.vertex_names):
            raise GraphError("duplicate vertex name")
        if len(set(self.edge_names)) != len(self.edge_names):
            raise GraphError("duplicate edge name")
        n = len(self.vertex_names)
        for e, (a, b) in enumerate(zip(self.tails, self.heads)):
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge {self.edge_names[e]} has an unknown endpoint")

    # basic sizes --------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertex_names)

    @property
    def n_edges(self) -> int:
        return len(self.tails)

    @property
    def edge_length(self) -> Fraction:
        return Fraction(1, self.m) ** self.level

    @cached_property
    def vertex_index(self) -> dict[str, int]:
        return {name: k for k, name in enumerate(self.vertex_names)}

    @cached_property
    def edge_index(self) -> dict[str, int]:
        return {name: k for k, name in enumerate(self.edge_names)}

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        acc: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for e, a in enumerate(self.tails):
            acc[a].append(e)
        return tuple(tuple(x) for x in acc)

    @cached_property
    def in_edges(self) -> tuple[tuple[int, ...], ...]:
        acc: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for e, b in enumerate(self.heads):
            acc[b].append(e)
        return tuple(tuple(x) for x in acc)

    @cached_property
    def neighbours(self) -> tuple[tuple[int, ...], ...]:
        """Undirected neighbours, without repetition, in increasing order."""
        acc: list[set[int]] = [set() for _ in range(self.n_vertices)]
        for a, b in zip(self.tails, self.heads):
            acc[a].add(b)
            acc[b].add(a)
        return tuple(tuple(sorted(s)) for s in acc)

    def sources(self) -> list[int]:
        return [v for v in range(self.n_vertices) if not self.in_edges[v]]

    def sinks(self) -> list[int]:
        return [v for v in range(self.n_vertices) if not self.out_edges[v]]

    # points ---------------------------------------------------------------
    def point(self, e: int, t) -> SubPoint:
        t = Fraction(t)
        if t == 0:
            return SubPoint.at(self.tails[e])
        if t == 1:
            return SubPoint.at(self.heads[e])
        if not 0 < t < 1:
            raise GraphError(f"fraction {t} outside [0, 1]")
        return SubPoint(edge=e, t=t)

    def height_of(self, p: SubPoint) -> Fraction:
        if p.edge is None:
            return self.heights[p.vertex]
        return self.heights[self.tails[p.edge]] + p.t * self.edge_length

    def point_name(self, p: SubPoint) -> str:
        if p.edge is None:
            return self.vertex_names[p.vertex]
        return f"{self.edge_names[p.edge]}@{p.t}"

    def parse_point(self, text: str) -> SubPoint:
        if text in self.vertex_index:
            return SubPoint.at(self.vertex_index[text])
        ename, sep, frac = text.rpartition("@")
        if not sep or ename not in self.edge_index:
            raise GraphError(f"unknown point {text!r}")
        return self.point(self.edge_index[ename], Fraction(frac))

    # order ------------------------------------------------------------------
    @cached_property
    def topological_order(self) -> tuple[int, ...] | None:
        """Kahn order of the vertices, or None when a directed cycle exists."""
        indeg = [len(x) for x in self.in_edges]
        queue = deque(v for v in range(self.n_vertices) if indeg[v] == 0)
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for e in self.out_edges[v]:
                w = self.heads[e]
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if len(order) != self.n_vertices:
            return None
        return tuple(order)

    @cached_property
    def descendants(self) -> tuple[int, ...]:
        # bitmask per vertex, including the vertex itself
        order = self.topological_order
        if order is None:
            raise GraphError("graph has a directed cycle")
        masks = [1 << v for v in range(self.n_vertices)]
        for v in reversed(order):
            acc = masks[v]
            for e in self.out_edges[v]:
                acc |= masks[self.heads[e]]
            masks[v] = acc
        return tuple(masks)

    @cached_property
    def ancestors(self) -> tuple[int, ...]:
        order = self.topological_order
        if order is None:
            raise GraphError("graph has a directed cycle")
        masks = [1 << v for v in range(self.n_vertices)]
        for v in order:
            acc = masks[v]
            for e in self.in_edges[v]:
                acc |= masks[self.tails[e]]
            masks[v] = acc
        return tuple(masks)

    def reaches(self, u: int, v: int) -> bool:
        return bool(self.descendants[u] >> v & 1)

    # subgraphs -------------------------------------------------------------
    def restrict(self, lo, hi) -> "LevelGraph":
        """Subgraph of edges lying inside the height band [lo, hi]."""
        lo, hi = Fraction(lo), Fraction(hi)
        keep_v = [v for v in range(self.n_vertices) if lo <= self.heights[v] <= hi]
        new_id = {v: k for k, v in enumerate(keep_v)}
        keep_e = [e for e in range(self.n_edges)
                  if self.tails[e] in new_id and self.heads[e] in new_id]
        return LevelGraph(
            level=self.level, m=self.m,
            vertex_names=tuple(self.vertex_names[v] for v in keep_v),
            heights=tuple(self.heights[v] for v in keep_v),
            tails=tuple(new_id[self.tails[e]] for e in keep_e),
            heads=tuple(new_id[self.heads[e]] for e in keep_e),
            edge_names=tuple(self.edge_names[e] for e in keep_e),
        )

    def structure_violations(self) -> list[str]:
        out = []
        L = self.edge_length
        for e in range(self.n_edges):
            a, b = self.tails[e], self.heads[e]
            if self.heights[b] - self.heights[a] != L:
                out.append(f"edge {self.edge_names[e]}: height step "
                           f"{self.heights[b] - self.heights[a]} != {L}")
        if self.topological_order is None:
            out.append("directed cycle present")
        return out


def subdivide(G: LevelGraph, k: int = 1) -> LevelGraph:
    """The ``k``-fold subdivision, relabelled to level ``G.level + k``.

    Vertex ``v`` of G keeps id ``v``; the ``j``-th interior vertex of edge
    ``e`` gets id ``n + e*(M-1) + j - 1`` and sub-edge ``j`` of ``e`` gets id
    ``e*M + j`` where ``M = m**k``.
    """
    if k < 0:
        raise GraphError("k must be nonnegative")
    if k == 0:
        return G
    M = G.m ** k
    L = G.edge_length / M
    names = list(G.vertex_names)
    heights = list(G.heights)
    for e in range(G.n_edges):
        base = G.heights[G.tails[e]]
        for j in range(1, M):
            names.append(f"{G.edge_names[e]}@{Fraction(j, M)}")
            heights.append(base + j * L)
    n = G.n_vertices
    tails, heads, enames = [], [], []
    for e in range(G.n_edges):
        inner = [n + e * (M - 1) + j - 1 for j in range(1, M)]
        chain = [G.tails[e], *inner, G.heads[e]]
        for j in range(M):
            tails.append(chain[j])
            heads.append(chain[j + 1])
            enames.append(f"{G.edge_names[e]}#{j}/{M}")
    return LevelGraph(G.level + k, G.m, tuple(names), tuple(heights),
                      tuple(tails), tuple(heads), tuple(enames))


def subdivision_vertex(G: LevelGraph, p: SubPoint, k: int = 1) -> int:
    """Id in ``subdivide(G, k)`` of a point of depth at most ``k``."""
    if p.edge is None:
        return p.vertex
    M = G.m ** k
    j = p.t * M
    if j.denominator != 1:
        raise GraphError(f"{p} is deeper than the {k}-fold subdivision")
    return G.n_vertices + p.edge * (M - 1) + int(j) - 1


def subdivision_point(G: LevelGraph, vid: int, k: int = 1) -> SubPoint:
    """Inverse of :func:`subdivision_vertex`."""
    n = G.n_vertices
    if vid < n:
        return SubPoint.at(vid)
    M = G.m ** k
    e, r = divmod(vid - n, M - 1)
    return SubPoint(edge=e, t=Fraction(r + 1, M))


@dataclass(frozen=True)
class Projection:
    """Map from level ``i+1`` to the subdivision of level ``i``."""

    vertex_map: tuple[SubPoint, ...]
    edge_map: tuple[tuple[int, int], ...]


class Violation(NamedTuple):
    kind: str
    level: int
    element: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "admissible"
        return "\n".join(f"[{v.kind}] level {v.level} {v.element}: {v.detail}"
                         for v in self.violations)


@dataclass(frozen=True, eq=False)
class InverseSystem:
    m: int
    levels: tuple[LevelGraph, ...]
    projections: tuple[Projection, ...]
    window: tuple[Fraction, Fraction]
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.levels:
            raise GraphError("an inverse system needs at least one level")
        if len(self.projections) != len(self.levels) - 1:
            raise GraphError("need one projection per consecutive pair of levels")
        for k, G in enumerate(self.levels):
            if G.m != self.m:
                raise GraphError(f"level {G.level} has base {G.m}, expected {self.m}")
            if G.level != self.levels[0].level + k:
                raise GraphError("levels must be contiguous")

    def __eq__(self, other):
        if not isinstance(other, InverseSystem):
            return NotImplemented
        return (self.m == other.m and self.levels == other.levels
                and self.projections == other.projections
                and self.window == other.window)

    __hash__ = None

    @property
    def base_level(self) -> int:
        return self.levels[0].level

    @property
    def top(self) -> int:
        return self.levels[-1].level

    def graph(self, i: int) -> LevelGraph:
        k = i - self.base_level
        if not 0 <= k < len(self.levels):
            raise GraphError(f"level {i} outside {self.base_level}..{self.top}")
        return self.levels[k]

    def projection(self, i: int) -> Projection:
        """Projection from level ``i+1`` onto the subdivision of level ``i``."""
        if not self.base_level <= i < self.top:
            raise GraphError(f"no projection out of level {i + 1}")
        return self.projections[i - self.base_level]

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def prime(self, i: int) -> LevelGraph:
        """The subdivision X_i' (ids as in :func:`subdivide`)."""
        return self._cached(("prime", i), lambda: subdivide(self.graph(i), 1))

    def prime_id(self, i: int, p: SubPoint) -> int:
        return subdivision_vertex(self.graph(i), p, 1)

    def prime_point(self, i: int, vid: int) -> SubPoint:
        return subdivision_point(self.graph(i), vid, 1)

    def preimages(self, i: int) -> tuple[tuple[int, ...], ...]:
        """For each vertex of X_i', the vertices of X_{i+1} mapping onto it."""
        def build():
            G = self.graph(i)
            acc: list[list[int]] = [[] for _ in range(self.prime(i).n_vertices)]
            for w, p in enumerate(self.projection(i).vertex_map):
                acc[subdivision_vertex(G, p, 1)].append(w)
            return tuple(tuple(x) for x in acc)
        return self._cached(("pre", i), build)

    def project_one(self, i: int, p: SubPoint) -> SubPoint:
        """Image in X_i of a point of X_{i+1}."""
        P = self.projection(i)
        if p.edge is None:
            return P.vertex_map[p.vertex]
        E, s = P.edge_map[p.edge]
        return self.graph(i).point(E, (s + p.t) / self.m)

    def vertex_images(self, j: int, i: int) -> tuple[SubPoint, ...]:
        """Images in X_i of all vertices of X_j (cached)."""
        def build():
            if i == j:
                return tuple(SubPoint.at(v) for v in range(self.graph(j).n_vertices))
            finer = self.vertex_images(j, i + 1)
            return tuple(self.project_one(i, p) for p in finer)
        if not self.base_level <= i <= j <= self.top:
            raise GraphError(f"cannot project level {j} to level {i}")
        return self._cached(("img", j, i), build)


def project(sys: InverseSystem, j: int, i: int, p: SubPoint) -> SubPoint:
    """Image of a point of X_j in X_i (a point of depth at most j - i)."""
    if not sys.base_level <= i <= j <= sys.top:
        raise GraphError(f"cannot project level {j} to level {i}")
    for k in range(j - 1, i - 1, -1):
        p = sys.project_one(k, p)
    return p


def validate_admissible(sys: InverseSystem) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations.append
    m = sys.m
    for G in sys.levels:
        for msg in G.structure_violations():
            kind = "cycle" if "cycle" in msg else "height"
            bad(Violation(kind, G.level, "graph", msg))
    G0 = sys.levels[0]
    if G0.n_vertices and len(_components(G0)) != 1:
        bad(Violation("disconnected", G0.level, "level", "base level is not connected"))
    for i in range(sys.base_level, sys.top):
        G, H = sys.graph(i), sys.graph(i + 1)
        P = sys.projection(i)
        if len(P.vertex_map) != H.n_vertices or len(P.edge_map) != H.n_edges:
            bad(Violation("shape", i + 1, "projection", "map sizes do not match level"))
            continue
        for v, p in enumerate(P.vertex_map):
            try:
                depth = p.depth(m)
            except GraphError as exc:
                bad(Violation("vertex", i + 1, H.vertex_names[v], str(exc)))
                continue
            if depth > 1:
                bad(Violation("vertex", i + 1, H.vertex_names[v],
                              "image is not a vertex of the subdivision"))
            elif G.height_of(p) != H.heights[v]:
                bad(Violation("height", i + 1, H.vertex_names[v],
                              f"height {H.heights[v]} maps to {G.height_of(p)}"))
        for e, (E, s) in enumerate(P.edge_map):
            name = H.edge_names[e]
            if not (0 <= E < G.n_edges and 0 <= s < m):
                bad(Violation("edge", i + 1, name, "image is not a sub-edge"))
                continue
            lo, hi = G.point(E, Fraction(s, m)), G.point(E, Fraction(s + 1, m))
            a, b = P.vertex_map[H.tails[e]], P.vertex_map[H.heads[e]]
            if (a, b) == (hi, lo):
                bad(Violation("direction", i + 1, name, "edge reverses direction"))
            elif a != lo or b != hi:
                bad(Violation("edge", i + 1, name,
                              f"endpoints map to {a}, {b}; sub-edge {s} of "
                              f"{G.edge_names[E]} expected"))
    return report


def _components(G: LevelGraph) -> list[list[int]]:
    seen = [False] * G.n_vertices
    comps = []
    for s in range(G.n_vertices):
        if seen[s]:
            continue
        seen[s] = True
        comp, stack = [], [s]
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in G.neighbours[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(comp)
    return comps


def precedes(G: LevelGraph, x: SubPoint, y: SubPoint) -> bool:
    """True iff a (possibly trivial) directed path runs from x to y."""
    if x == y:
        return True
    if x.edge is not None and x.edge == y.edge:
        return x.t < y.t
    out = x.vertex if x.edge is None else G.heads[x.edge]
    into = y.vertex if y.edge is None else G.tails[y.edge]
    return G.reaches(out, into)


class DirectedPath(NamedTuple):
    vertices: tuple[int, ...]
    edges: tuple[int, ...]


def iter_maximal_paths(G: LevelGraph) -> Iterator[DirectedPath]:
    """Source-to-sink directed paths, as edge sequences (parallel edges differ)."""
    for s in G.sources():
        stack = [(s, (s,), ())]
        while stack:
            v, vs, es = stack.pop()
            outs = G.out_edges[v]
            if not outs:
                yield DirectedPath(vs, es)
                continue
            for e in reversed(outs):
                w = G.heads[e]
                stack.append((w, vs + (w,), es + (e,)))


def maximal_directed_paths(G: LevelGraph) -> list[DirectedPath]:
    return list(iter_maximal_paths(G))


def count_maximal_paths(G: LevelGraph) -> int:
    ways = [0] * G.n_vertices
    order = G.topological_order
    if order is None:
        raise GraphError("graph has a directed cycle")
    for v in reversed(order):
        outs = G.out_edges[v]
        ways[v] = 1 if not outs else sum(ways[G.heads[e]] for e in outs)
    return sum(ways[s] for s in G.sources())


def components(G: LevelGraph) -> list[list[int]]:
    return _components(G)


def same_shape(G: LevelGraph, H: LevelGraph) -> bool:
    """Cheap structural comparison ignoring names: heights and edge spans."""
    if G.level != H.level or G.m != H.m:
        return False
    spans = lambda X: sorted((X.heights[a], X.heights[b]) for a, b in zip(X.tails, X.heads))
    return sorted(G.heights) == sorted(H.heights) and spans(G) == spans(H)


def graph_from_parts(level: int, m: int, vertices: Sequence[tuple[str, Fraction]],
                     edges: Sequence[tuple[str, str, str]]) -> LevelGraph:
    """Build a graph from (name, height) and (name, tail name, head name) lists."""
    idx = {name: k for k, (name, _) in enumerate(vertices)}
    try:
        tails = tuple(idx[t] for _, t, _ in edges)
        heads = tuple(idx[h] for _, _, h in edges)
    except KeyError as exc:
        raise GraphError(f"edge refers to unknown vertex {exc.args[0]!r}") from None
    return LevelGraph(level, m, tuple(n for n, _ in vertices),
                      tuple(Fraction(h) for _, h in vertices),
                      tails, heads, tuple(n for n, _, _ in edges))
