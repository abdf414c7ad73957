"""Path metrics, the star-chain metric, trimmed-star brackets and related checks.

The star-chain metric at depth N lets a chain jump between two points whose
level-k images share a closed star (cost ``2*m**-k``, k = base..N) and also
slide along edges of the top level at cost equal to the length travelled.
Sliding is the limit of star moves in the system continued past level N by
plain subdivision, so the value is the star-chain metric of that continued
system.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

from .graph_core import (GraphError, InverseSystem, LevelGraph, SubPoint,
                         project, subdivision_vertex)
from .unionfind import UnionFind

INF = float("inf")


class MetricError(ValueError):
    pass


# path metric -----------------------------------------------------------------

def hop_distances(G: LevelGraph, source: int) -> list[float]:
    """Undirected BFS edge counts from ``source`` (inf when unreachable)."""
    dist = [INF] * G.n_vertices
    dist[source] = 0
    queue = deque([source])
    nb = G.neighbours
    while queue:
        v = queue.popleft()
        for w in nb[v]:
            if dist[w] == INF:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def _anchors(G: LevelGraph, p: SubPoint) -> list[tuple[int, Fraction]]:
    # (vertex, distance in edge units) pairs from which p is reached
    if p.edge is None:
        return [(p.vertex, Fraction(0))]
    return [(G.tails[p.edge], p.t), (G.heads[p.edge], 1 - p.t)]


def path_metric(G: LevelGraph, x: SubPoint, y: SubPoint):
    """Exact length of a shortest undirected path, or ``inf``."""
    if x == y:
        return Fraction(0)
    best = INF
    if x.edge is not None and x.edge == y.edge:
        best = abs(x.t - y.t)
    for a, da in _anchors(G, x):
        hops = hop_distances(G, a)
        for b, db in _anchors(G, y):
            if hops[b] != INF:
                best = min(best, da + hops[b] + db)
    return INF if best == INF else best * G.edge_length


# star-chain metric -------------------------------------------------------------

def closed_star_owners(G: LevelGraph, p: SubPoint) -> tuple[int, ...]:
    """Vertices v of G with p in the closed star of v."""
    if p.edge is None:
        return (p.vertex, *G.neighbours[p.vertex])
    return tuple(sorted({G.tails[p.edge], G.heads[p.edge]}))


def trimmed_star_owners(G: LevelGraph, p: SubPoint) -> tuple[int, ...]:
    """Vertices v of G with p in the trimmed star of v."""
    if p.edge is None:
        return (p.vertex,)
    m = G.m
    out = []
    if p.t <= Fraction(m - 1, m):
        out.append(G.tails[p.edge])
    if p.t >= Fraction(1, m):
        out.append(G.heads[p.edge])
    return tuple(out)


class Move(NamedTuple):
    kind: str          # "star" or "edge"
    level: int
    element: int       # star centre (vertex of that level) or top-level edge
    cost: Fraction


@dataclass
class StarChainCertificate:
    total: Fraction
    points: list[SubPoint]
    moves: list[Move]

    def verify(self, sys: InverseSystem) -> bool:
        """Re-check every move from scratch by projection."""
        if len(self.points) != len(self.moves) + 1:
            return False
        if sum((mv.cost for mv in self.moves), Fraction(0)) != self.total:
            return False
        top = sys.graph(sys.top)
        for a, b, mv in zip(self.points, self.points[1:], self.moves):
            if mv.kind == "star":
                G = sys.graph(mv.level)
                pa, pb = project(sys, sys.top, mv.level, a), project(sys, sys.top, mv.level, b)
                if mv.element not in closed_star_owners(G, pa):
                    return False
                if mv.element not in closed_star_owners(G, pb):
                    return False
                if mv.cost != 2 * G.edge_length:
                    return False
            else:
                e = mv.element
                on_edge = lambda p: (p.edge == e) or (p.edge is None and p.vertex in
                                                     (top.tails[e], top.heads[e]))
                if not (on_edge(a) and on_edge(b)):
                    return False
                ta = a.t if a.edge == e else Fraction(int(a.vertex == top.heads[e]))
                tb = b.t if b.edge == e else Fraction(int(b.vertex == top.heads[e]))
                if mv.cost != abs(ta - tb) * top.edge_length:
                    return False
        return True


class MoveGraph:
    """Auxiliary graph: top-level vertices, one hub per (level, vertex) star."""

    def __init__(self, sys: InverseSystem, extra_depth: int = 0):
        self.sys = sys
        top = sys.graph(sys.top)
        self.top_graph = top
        self.n = top.n_vertices
        self.scale = sys.m ** (sys.top + extra_depth)   # units per unit height
        self.extra_depth = extra_depth
        self.hub_offset: dict[int, int] = {}
        off = self.n
        for i in range(sys.base_level, sys.top + 1):
            self.hub_offset[i] = off
            off += sys.graph(i).n_vertices
        self.size = off
        self.hub_cost = {i: 2 * sys.m ** (sys.top - i + extra_depth)
                         for i in range(sys.base_level, sys.top + 1)}
        self.edge_units = sys.m ** extra_depth
        out: list[list[tuple[int, int]]] = [[] for _ in range(off)]
        for i in range(sys.base_level, sys.top + 1):
            G = sys.graph(i)
            imgs = sys.vertex_images(sys.top, i)
            c = self.hub_cost[i]
            base = self.hub_offset[i]
            for x, p in enumerate(imgs):
                for v in closed_star_owners(G, p):
                    out[x].append((base + v, c))
                    out[base + v].append((x, 0))
        for e in range(top.n_edges):
            a, b = top.tails[e], top.heads[e]
            out[a].append((b, self.edge_units))
            out[b].append((a, self.edge_units))
        self.out = out

    def hub_of(self, node: int) -> tuple[int, int]:
        for i in sorted(self.hub_offset, reverse=True):
            if node >= self.hub_offset[i]:
                return i, node - self.hub_offset[i]
        raise GraphError("not a hub")

    def extra_links(self, p: SubPoint, closing: bool = False) -> list[tuple[int, int]]:
        """Moves of a query point (a top-level SubPoint) into the graph; with
        ``closing`` the costs of moves from the graph back to the point."""
        sys = self.sys
        if p.edge is None:
            return [(p.vertex, 0)]
        links = []
        for i in range(sys.base_level, sys.top + 1):
            q = project(sys, sys.top, i, p)
            c = 0 if closing else self.hub_cost[i]
            for v in closed_star_owners(sys.graph(i), q):
                links.append((self.hub_offset[i] + v, c))
        top = self.top_graph
        tail_units = p.t * self.edge_units
        if tail_units.denominator != 1:
            raise MetricError("query point deeper than the move graph resolution")
        links.append((top.tails[p.edge], int(tail_units)))
        links.append((top.heads[p.edge], self.edge_units - int(tail_units)))
        return links

    def direct(self, x: SubPoint, y: SubPoint) -> tuple[int, int | None]:
        """Cheapest single move between two query points: (cost, hub or None)."""
        best, how = INF, None
        if x.edge is not None and x.edge == y.edge:
            best = int(abs(x.t - y.t) * self.edge_units)
        sys = self.sys
        for i in range(sys.base_level, sys.top + 1):
            G = sys.graph(i)
            a = closed_star_owners(G, project(sys, sys.top, i, x))
            b = set(closed_star_owners(G, project(sys, sys.top, i, y)))
            common = [v for v in a if v in b]
            if common and self.hub_cost[i] < best:
                best, how = self.hub_cost[i], self.hub_offset[i] + min(common)
        return best, how

    def dijkstra(self, source_links: list[tuple[int, int]]):
        dist = [INF] * self.size
        pred = [-1] * self.size
        heap = []
        for node, c in source_links:
            if c < dist[node]:
                dist[node] = c
                pred[node] = -2
                heapq.heappush(heap, (c, node))
        out = self.out
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist[v]:
                continue
            for w, c in out[v]:
                nd = d + c
                if nd < dist[w]:
                    dist[w] = nd
                    pred[w] = v
                    heapq.heappush(heap, (nd, w))
        return dist, pred


def _query_depth(sys: InverseSystem, *pts: SubPoint) -> int:
    return max(p.depth(sys.m) for p in pts)


def dbar(sys: InverseSystem, x: SubPoint, y: SubPoint) -> tuple[Fraction, StarChainCertificate]:
    """Star-chain distance between two top-level points, with a certificate."""
    if x == y:
        return Fraction(0), StarChainCertificate(Fraction(0), [x], [])
    mg = MoveGraph(sys, _query_depth(sys, x, y))
    dist, pred = mg.dijkstra(mg.extra_links(x))
    best, last = INF, None
    for node, c in mg.extra_links(y, closing=True):
        if dist[node] + c < best:
            best, last = dist[node] + c, (node, c)
    cost, hub = mg.direct(x, y)
    if cost < best:
        total = Fraction(cost, mg.scale)
        if hub is None:
            move = Move("edge", sys.top, x.edge, total)
        else:
            i, v = mg.hub_of(hub)
            move = Move("star", i, v, total)
        return total, StarChainCertificate(total, [x, y], [move])
    total = Fraction(best, mg.scale)
    return total, _certificate(sys, mg, pred, x, y, last, total)


def dbar_points(sys: InverseSystem, points: Sequence[SubPoint]) -> list[list[Fraction]]:
    """Pairwise star-chain distances between arbitrary top-level points."""
    mg = MoveGraph(sys, _query_depth(sys, *points) if points else 0)
    closing = [mg.extra_links(p, closing=True) for p in points]
    n = len(points)
    out = [[Fraction(0)] * n for _ in range(n)]
    for a, x in enumerate(points):
        dist, _ = mg.dijkstra(mg.extra_links(x))
        for b in range(a + 1, n):
            y = points[b]
            if x == y:
                continue
            best = min(dist[node] + c for node, c in closing[b])
            best = min(best, mg.direct(x, y)[0])
            out[a][b] = out[b][a] = Fraction(best, mg.scale)
    return out


def _certificate(sys, mg: MoveGraph, pred, x, y, last, total) -> StarChainCertificate:
    node, closing = last
    chain = [node]
    while pred[chain[-1]] >= 0:
        chain.append(pred[chain[-1]])
    chain.reverse()
    # chain starts at a node linked from x; nodes < n are top vertices, others hubs
    points = [x]
    moves: list[Move] = []
    top = mg.top_graph
    pending_hub = None

    def add_hop(to_point: SubPoint, hub):
        a = points[-1]
        if hub is not None:
            i, v = hub
            moves.append(Move("star", i, v, 2 * sys.graph(i).edge_length))
        else:
            moves.append(Move("edge", sys.top, _common_edge(top, a, to_point),
                              _slide(top, a, to_point)))
        points.append(to_point)

    for node in chain:
        if node >= mg.n:
            pending_hub = mg.hub_of(node)
            continue
        p = SubPoint.at(node)
        if p != points[-1]:
            add_hop(p, pending_hub)
        pending_hub = None
    if y != points[-1]:
        if last[0] >= mg.n:
            add_hop(y, mg.hub_of(last[0]))
        else:
            add_hop(y, None)
    return StarChainCertificate(total, points, moves)


def _common_edge(G: LevelGraph, a: SubPoint, b: SubPoint) -> int:
    def edges(p):
        if p.edge is not None:
            return {p.edge}
        return set(G.in_edges[p.vertex]) | set(G.out_edges[p.vertex])
    common = edges(a) & edges(b)
    if not common:
        raise MetricError("slide between points without a common edge")
    return min(common)


def _slide(G: LevelGraph, a: SubPoint, b: SubPoint) -> Fraction:
    e = _common_edge(G, a, b)
    pos = lambda p: p.t if p.edge == e else Fraction(int(p.vertex == G.heads[e]))
    return abs(pos(a) - pos(b)) * G.edge_length


def dbar_matrix(sys: InverseSystem, vertices: Sequence[int]) -> list[list[Fraction]]:
    """Pairwise star-chain distances between top-level vertices."""
    mg = MoveGraph(sys)
    out = []
    for x in vertices:
        dist, _ = mg.dijkstra([(x, 0)])
        out.append([Fraction(dist[y], mg.scale) for y in vertices])
    return out


def window_vertices(sys: InverseSystem, level: int | None = None) -> list[int]:
    G = sys.graph(sys.top if level is None else level)
    lo, hi = sys.window
    return [v for v in range(G.n_vertices) if lo <= G.heights[v] <= hi]


# trimmed-star bracket ----------------------------------------------------------

class Bracket(NamedTuple):
    level: int
    lower: Fraction
    upper: Fraction


def trimmed_star_level(sys: InverseSystem, x: SubPoint, y: SubPoint) -> int:
    """Smallest level whose images of x and y share no trimmed star."""
    for i in range(sys.base_level, sys.top + 1):
        G = sys.graph(i)
        px, py = project(sys, sys.top, i, x), project(sys, sys.top, i, y)
        if not set(trimmed_star_owners(G, px)) & set(trimmed_star_owners(G, py)):
            return i
    raise MetricError("points share a trimmed star at every level; no bracket")


def trimmed_star_bracket(sys: InverseSystem, x: SubPoint, y: SubPoint) -> Bracket:
    if x == y:
        raise MetricError("bracket needs two distinct points")
    j = trimmed_star_level(sys, x, y)
    m = sys.m
    return Bracket(j, Fraction(m - 2, m) * Fraction(1, m) ** j, 2 * Fraction(1, m) ** (j - 1))


# Lipschitz-light certificate for the height map ---------------------------------

def components_under(dist: Sequence[Sequence[Fraction]], members: Sequence[int],
                     delta: Fraction) -> list[list[int]]:
    """delta-chain components of ``members`` (indices into ``dist``)."""
    uf = UnionFind(members)
    for k, a in enumerate(members):
        row = dist[a]
        for b in members[k + 1:]:
            if row[b] <= delta:
                uf.union(a, b)
    return uf.groups()


def default_interval_grid(sys: InverseSystem) -> list[tuple[Fraction, Fraction]]:
    """Intervals of length m^-s (s = 0..N) inside the window, offsets in steps of m^-(s+1)."""
    lo, hi = sys.window
    m = sys.m
    out = []
    for s in range(0, sys.top + 1):
        L = Fraction(1, m) ** s
        step = L / m
        a = lo
        while a + L <= hi:
            out.append((a, a + L))
            a += step
    return out


@dataclass
class LightReport:
    worst_ratio: Fraction
    worst_interval: tuple[Fraction, Fraction] | None
    bound: Fraction
    intervals: int

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= self.bound


def phi_lipschitz_light_check(sys: InverseSystem, grid=None, dist=None,
                              vertices: Sequence[int] | None = None) -> LightReport:
    top = sys.graph(sys.top)
    vertices = window_vertices(sys) if vertices is None else list(vertices)
    if dist is None:
        dist = dbar_matrix(sys, vertices)
    grid = default_interval_grid(sys) if grid is None else grid
    worst, where = Fraction(0), None
    for a, b in grid:
        a, b = Fraction(a), Fraction(b)
        width = b - a
        if width <= 0:
            raise MetricError(f"interval [{a}, {b}] has no positive length")
        members = [k for k, v in enumerate(vertices) if a <= top.heights[v] <= b]
        for comp in components_under(dist, members, width):
            diam = max((dist[p][q] for p in comp for q in comp), default=Fraction(0))
            ratio = diam / width
            if ratio > worst:
                worst, where = ratio, (a, b)
    return LightReport(worst, where, Fraction(8 * sys.m), len(grid))


# comparison with the path metric ------------------------------------------------

@dataclass
class ComparisonReport:
    theta: int
    constant: Fraction
    pairs: int
    lower_ok: bool
    upper_ok: bool
    worst_upper_ratio: Fraction
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok and not self.violations


def _in_band(sys: InverseSystem, h: Fraction) -> bool:
    lo, hi = sys.window
    return lo <= h <= hi


def measure_theta(sys: InverseSystem) -> tuple[int | None, list[str]]:
    """Largest edge-path length needed to join two vertices of a fibre over a
    window vertex of a subdivided level; None when some fibre is disconnected."""
    worst, problems = 0, []
    for i in range(sys.base_level, sys.top):
        H = sys.graph(i + 1)
        Gp = sys.prime(i)
        for x, fibre in enumerate(sys.preimages(i)):
            if len(fibre) < 2 or not _in_band(sys, Gp.heights[x]):
                continue
            for a in fibre:
                hops = hop_distances(H, a)
                for b in fibre:
                    if hops[b] == INF:
                        problems.append(f"fibre over {Gp.vertex_names[x]} at level {i} "
                                        f"is not connected")
                        return None, problems
                    worst = max(worst, int(hops[b]))
    return worst, problems


def openness_violations(sys: InverseSystem) -> list[str]:
    """Local surjectivity of each projection at window vertices: every sub-edge
    of X_i' at the image point is the image of an edge at the vertex."""
    out = []
    for i in range(sys.base_level, sys.top):
        G, H = sys.graph(i), sys.graph(i + 1)
        P = sys.projection(i)
        Gp = sys.prime(i)
        for w in range(H.n_vertices):
            if not _in_band(sys, H.heights[w]):
                continue
            p = P.vertex_map[w]
            x = subdivision_vertex(G, p, 1)
            needed = set(Gp.in_edges[x]) | set(Gp.out_edges[x])
            got = {P.edge_map[e][0] * sys.m + P.edge_map[e][1]
                   for e in (*H.in_edges[w], *H.out_edges[w])}
            missing = needed - got
            if missing:
                out.append(f"level {i + 1} vertex {H.vertex_names[w]} misses sub-edges "
                           + ", ".join(sorted(Gp.edge_names[s] for s in missing)))
    return out


def path_metric_comparison(sys: InverseSystem, theta: int | None = None,
                           vertices: Sequence[int] | None = None,
                           dist=None) -> ComparisonReport:
    measured, problems = measure_theta(sys)
    problems += openness_violations(sys)
    if theta is None:
        theta = measured if measured is not None else 0
    m = sys.m
    c = Fraction(2 * m + theta, 2 * (m - 1))
    top = sys.graph(sys.top)
    vertices = window_vertices(sys) if vertices is None else list(vertices)
    if dist is None:
        dist = dbar_matrix(sys, vertices)
    L = top.edge_length
    lower_ok = upper_ok = True
    worst = Fraction(0)
    pairs = 0
    for k, a in enumerate(vertices):
        hops = hop_distances(top, a)
        for l in range(k + 1, len(vertices)):
            b = vertices[l]
            pairs += 1
            db = dist[k][l]
            dn = hops[b] * L if hops[b] != INF else INF
            if db > dn:
                lower_ok = False
            if dn == INF or dn > c * db:
                upper_ok = False
            if dn != INF and db:
                worst = max(worst, dn / db)
    return ComparisonReport(theta, c, pairs, lower_ok, upper_ok, worst, problems)
