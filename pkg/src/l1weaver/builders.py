"""Constructors for lines, the split (doubling) system and gadget-replacement systems."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .graph_core import (GraphError, InverseSystem, LevelGraph, Projection, SubPoint,
                         subdivide, subdivision_point)

DEFAULT_COLLAR = 1
FORMAT_SPEC = "l1weaver.spec/1"


class SpecError(ValueError):
    """Invalid system description; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Gadget:
    """Replacement graph for one edge.

    ``positions`` gives each vertex's height in units of the new edge length,
    from 0 at the source to ``m`` at the sink.  An edge whose tail sits at
    position ``p`` covers sub-edge ``p`` of the replaced edge.
    """

    m: int
    names: tuple[str, ...]
    positions: tuple[int, ...]
    edges: tuple[tuple[str, str], ...]
    source: str
    sink: str

    def position(self, name: str) -> int:
        return self.positions[self.names.index(name)]

    def check(self) -> None:
        if self.m < 2:
            raise SpecError("gadget.m", "must be at least 2")
        if len(set(self.names)) != len(self.names):
            raise SpecError("gadget.vertices", "duplicate vertex name")
        pos = dict(zip(self.names, self.positions))
        for key in ("source", "sink"):
            name = getattr(self, key)
            if name not in pos:
                raise SpecError(f"gadget.{key}", f"unknown vertex {name!r}")
        if pos[self.source] != 0:
            raise SpecError("gadget.source", "source must sit at position 0")
        if pos[self.sink] != self.m:
            raise SpecError("gadget.sink", f"sink must sit at position {self.m}")
        for name, p in pos.items():
            if not 0 <= p <= self.m:
                raise SpecError(f"gadget.vertices.{name}", f"position {p} outside 0..{self.m}")
            if p in (0, self.m) and name not in (self.source, self.sink):
                raise SpecError(f"gadget.vertices.{name}",
                                "only the source and sink may sit at the ends")
        ins = {n: 0 for n in self.names}
        outs = {n: 0 for n in self.names}
        for k, (a, b) in enumerate(self.edges):
            for end in (a, b):
                if end not in pos:
                    raise SpecError(f"gadget.edges[{k}]", f"unknown vertex {end!r}")
            if pos[b] != pos[a] + 1:
                raise SpecError(f"gadget.edges[{k}]",
                                f"{a}->{b} does not climb exactly one sub-edge")
            outs[a] += 1
            ins[b] += 1
        for name in self.names:
            if name != self.source and not ins[name]:
                raise SpecError(f"gadget.vertices.{name}", "second source")
            if name != self.sink and not outs[name]:
                raise SpecError(f"gadget.vertices.{name}", "second sink")


def default_gadget() -> Gadget:
    return Gadget(
        m=4,
        names=("v0", "q1", "a2", "b2", "q3", "v4"),
        positions=(0, 1, 2, 2, 3, 4),
        edges=(("v0", "q1"), ("q1", "a2"), ("q1", "b2"),
               ("a2", "q3"), ("b2", "q3"), ("q3", "v4")),
        source="v0", sink="v4",
    )


def path_gadget(m: int) -> Gadget:
    names = tuple(f"p{k}" for k in range(m + 1))
    return Gadget(m, names, tuple(range(m + 1)),
                  tuple((names[k], names[k + 1]) for k in range(m)),
                  names[0], names[-1])


# level-0 lines -------------------------------------------------------------

def line_graph(lo, hi, m: int, level: int = 0) -> LevelGraph:
    """Directed path over [lo, hi] with edges of length ``m**-level``."""
    lo, hi = Fraction(lo), Fraction(hi)
    L = Fraction(1, m) ** level
    steps = (hi - lo) / L
    if hi <= lo or steps.denominator != 1:
        raise SpecError("span", f"[{lo}, {hi}] is not a positive whole number of edges")
    n = int(steps)
    heights = tuple(lo + k * L for k in range(n + 1))
    names = tuple(str(h) for h in heights)
    return LevelGraph(level, m, names, heights, tuple(range(n)), tuple(range(1, n + 1)),
                      tuple(f"{names[k]}>{names[k + 1]}" for k in range(n)))


# one-level refinements -------------------------------------------------------

def _refine_line(G: LevelGraph) -> tuple[LevelGraph, Projection]:
    H = subdivide(G, 1)
    m = G.m
    vmap = tuple(subdivision_point(G, v, 1) for v in range(H.n_vertices))
    emap = tuple(divmod(e, m) for e in range(H.n_edges))
    return H, Projection(vmap, emap)


def _refine_split(G: LevelGraph) -> tuple[LevelGraph, Projection]:
    # two copies of the subdivision, glued along the new vertices
    m = G.m
    L = G.edge_length / m
    names, heights, vmap = [], [], []
    for v in range(G.n_vertices):
        for c in "ab":
            names.append(f"{G.vertex_names[v]}{c}")
            heights.append(G.heights[v])
            vmap.append(SubPoint.at(v))
    n2 = len(names)
    for E in range(G.n_edges):
        for k in range(1, m):
            names.append(f"{G.edge_names[E]}/{k}")
            heights.append(G.heights[G.tails[E]] + k * L)
            vmap.append(G.point(E, Fraction(k, m)))
    tails, heads, enames, emap = [], [], [], []
    for E in range(G.n_edges):
        inner = [n2 + E * (m - 1) + k - 1 for k in range(1, m)]
        for s in range(m):
            for ci, c in enumerate("ab"):
                tails.append(2 * G.tails[E] + ci if s == 0 else inner[s - 1])
                heads.append(2 * G.heads[E] + ci if s == m - 1 else inner[s])
                enames.append(f"{G.edge_names[E]}.{s}{c}")
                emap.append((E, s))
    H = LevelGraph(G.level + 1, m, tuple(names), tuple(heights),
                   tuple(tails), tuple(heads), tuple(enames))
    return H, Projection(tuple(vmap), tuple(emap))


def _refine_gadget(G: LevelGraph, gadget: Gadget) -> tuple[LevelGraph, Projection]:
    m = G.m
    L = G.edge_length / m
    inner = [g for g in gadget.names if g not in (gadget.source, gadget.sink)]
    pos = dict(zip(gadget.names, gadget.positions))
    names = list(G.vertex_names)
    heights = list(G.heights)
    vmap = [SubPoint.at(v) for v in range(G.n_vertices)]
    ids: list[dict[str, int]] = []
    for E in range(G.n_edges):
        local = {gadget.source: G.tails[E], gadget.sink: G.heads[E]}
        for g in inner:
            local[g] = len(names)
            names.append(f"{G.edge_names[E]}:{g}")
            heights.append(G.heights[G.tails[E]] + pos[g] * L)
            vmap.append(G.point(E, Fraction(pos[g], m)))
        ids.append(local)
    tails, heads, enames, emap = [], [], [], []
    for E in range(G.n_edges):
        for a, b in gadget.edges:
            tails.append(ids[E][a])
            heads.append(ids[E][b])
            enames.append(f"{G.edge_names[E]}:{a}>{b}")
            emap.append((E, pos[a]))
    H = LevelGraph(G.level + 1, m, tuple(names), tuple(heights),
                   tuple(tails), tuple(heads), tuple(enames))
    return H, Projection(tuple(vmap), tuple(emap))


def _tower(G0: LevelGraph, refine: Callable, N: int):
    levels, projs = [G0], []
    for _ in range(N):
        H, P = refine(levels[-1])
        levels.append(H)
        projs.append(P)
    return levels, projs


# collars -------------------------------------------------------------------

def _walk(H: LevelGraph, p: SubPoint, steps: int, down: bool):
    """Follow a directed path of sub-edges of H' away from ``p``."""
    m = H.m
    pts, subs = [], []
    for _ in range(steps):
        if p.edge is None:
            choices = H.in_edges[p.vertex] if down else H.out_edges[p.vertex]
            if not choices:
                raise GraphError("collar walk left the graph")
            E = choices[0]
            s = m - 1 if down else 0
        else:
            E, j = p.edge, int(p.t * m)
            s = j - 1 if down else j
        subs.append((E, s))
        p = H.point(E, Fraction(s if down else s + 1, m))
        pts.append(p)
    return pts, subs


def attach_collars(levels, projections, collar) -> tuple[list[LevelGraph], list[Projection]]:
    """Attach a directed path of height ``collar`` below every source and above
    every sink, at every level, so that projections stay simplicial.
    """
    collar = Fraction(collar)
    out_levels: list[LevelGraph] = []
    out_projs: list[Projection] = []
    for k, G in enumerate(levels):
        n_steps = collar / G.edge_length
        if collar <= 0 or n_steps.denominator != 1:
            raise SpecError("collar", f"{collar} is not a positive multiple of the "
                                      f"level-{G.level} edge length")
        n_steps = int(n_steps)
        names, heights = list(G.vertex_names), list(G.heights)
        tails, heads, enames = list(G.tails), list(G.heads), list(G.edge_names)
        vmap = list(projections[k - 1].vertex_map) if k else []
        emap = list(projections[k - 1].edge_map) if k else []
        prev = out_levels[-1] if k else None
        L = G.edge_length
        for down, ends, tag in ((True, G.sources(), "d"), (False, G.sinks(), "u")):
            for v in ends:
                base = G.vertex_names[v]
                if prev is not None:
                    pts, subs = _walk(prev, vmap[v], n_steps, down)
                last = v
                for j in range(1, n_steps + 1):
                    w = len(names)
                    names.append(f"{base}~{tag}{j}")
                    heights.append(G.heights[v] + (-j if down else j) * L)
                    tails.append(w if down else last)
                    heads.append(last if down else w)
                    enames.append(f"{base}~{tag}{j}")
                    if prev is not None:
                        vmap.append(pts[j - 1])
                        emap.append(subs[j - 1])
                    last = w
        out_levels.append(LevelGraph(G.level, G.m, tuple(names), tuple(heights),
                                     tuple(tails), tuple(heads), tuple(enames)))
        if k:
            out_projs.append(Projection(tuple(vmap), tuple(emap)))
    return out_levels, out_projs


def _finish(levels, projs, collar, window, label, m) -> InverseSystem:
    if collar is not None:
        levels, projs = attach_collars(levels, projs, collar)
    return InverseSystem(m, tuple(levels), tuple(projs),
                         (Fraction(window[0]), Fraction(window[1])), label)


# public builders -------------------------------------------------------------

def build_line(N: int, span=(0, 1), m: int = 3, window=None) -> InverseSystem:
    if N < 0:
        raise SpecError("depth", "must be nonnegative")
    G0 = line_graph(span[0], span[1], m)
    levels, projs = _tower(G0, _refine_line, N)
    return _finish(levels, projs, None, window or span, "line", m)


def build_split(N: int, collar=DEFAULT_COLLAR, m: int = 3) -> InverseSystem:
    """Doubling system: each level is two copies of the previous subdivision
    glued along the newly created vertices, over the unit window."""
    if N < 0:
        raise SpecError("depth", "must be nonnegative")
    levels, projs = _tower(line_graph(0, 1, m), _refine_split, N)
    return _finish(levels, projs, collar, (0, 1), "laakso-split", m)


def build_diamond(N: int, collar=DEFAULT_COLLAR, gadget: Gadget | None = None) -> InverseSystem:
    gadget = gadget or default_gadget()
    gadget.check()
    if N < 0:
        raise SpecError("depth", "must be nonnegative")
    levels, projs = _tower(line_graph(0, 1, gadget.m),
                           lambda G: _refine_gadget(G, gadget), N)
    return _finish(levels, projs, collar, (0, 1), "laakso-diamond", gadget.m)


# documents -------------------------------------------------------------------

def gadget_from_doc(doc) -> Gadget:
    if not isinstance(doc, dict):
        raise SpecError("gadget", "must be an object")
    for key in ("m", "vertices", "edges", "source", "sink"):
        if key not in doc:
            raise SpecError(f"gadget.{key}", "missing")
    verts = doc["vertices"]
    if not isinstance(verts, dict):
        raise SpecError("gadget.vertices", "must map vertex names to positions")
    edges = []
    for k, e in enumerate(doc["edges"]):
        try:
            a, b = (e["tail"], e["head"]) if isinstance(e, dict) else e
        except (KeyError, ValueError, TypeError):
            raise SpecError(f"gadget.edges[{k}]", "expected {tail, head} or [tail, head]") from None
        if isinstance(e, dict) and "sub_edge" in e:
            if a not in verts or e["sub_edge"] != verts[a]:
                raise SpecError(f"gadget.edges[{k}].sub_edge",
                                "must equal the tail position")
        edges.append((str(a), str(b)))
    try:
        g = Gadget(int(doc["m"]), tuple(str(n) for n in verts),
                   tuple(int(p) for p in verts.values()), tuple(edges),
                   str(doc["source"]), str(doc["sink"]))
    except (TypeError, ValueError) as exc:
        raise SpecError("gadget", str(exc)) from None
    g.check()
    return g


def gadget_to_doc(g: Gadget) -> dict:
    return {"m": g.m, "vertices": dict(zip(g.names, g.positions)),
            "edges": [{"tail": a, "head": b, "sub_edge": g.position(a)} for a, b in g.edges],
            "source": g.source, "sink": g.sink}


def _frac(value, field: str) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        raise SpecError(field, f"not an exact rational: {value!r}") from None


def load_system(doc) -> InverseSystem:
    """Build a system from a spec document, or decode a serialized system."""
    if not isinstance(doc, dict):
        raise SpecError("<root>", "document must be a JSON object")
    fmt = doc.get("format", FORMAT_SPEC)
    if fmt != FORMAT_SPEC:
        from .documents import system_from_doc
        return system_from_doc(doc)
    depth = doc.get("depth")
    if not isinstance(depth, int) or depth < 0:
        raise SpecError("depth", "must be a nonnegative integer")
    collar = _frac(doc.get("collar", DEFAULT_COLLAR), "collar")
    builtin = doc.get("builtin")
    if "gadget" in doc:
        if builtin not in (None, "laakso-diamond"):
            raise SpecError("gadget", f"not accepted by builtin {builtin!r}")
        return build_diamond(depth, collar, gadget_from_doc(doc["gadget"]))
    if builtin == "laakso-split":
        return build_split(depth, collar)
    if builtin == "laakso-diamond":
        return build_diamond(depth, collar)
    if builtin == "line":
        span = doc.get("span", ["0", "1"])
        if not isinstance(span, list) or len(span) != 2:
            raise SpecError("span", "expected [lo, hi]")
        lo, hi = _frac(span[0], "span[0]"), _frac(span[1], "span[1]")
        window = doc.get("window")
        if window is not None:
            window = (_frac(window[0], "window[0]"), _frac(window[1], "window[1]"))
        return build_line(depth, (lo, hi), int(doc.get("m", 3)), window)
    if builtin is None:
        raise SpecError("builtin", "missing (or give a gadget)")
    raise SpecError("builtin", f"unknown builtin {builtin!r}")
