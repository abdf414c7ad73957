"""Serialized systems, DOT export and exact CSV helpers.

Every number written here is an exact rational string ("p/q" or "p").  A
system document lists each level's vertices and edges by name and each
projection as vertex images (a vertex name, or an edge name plus the fraction
along it) and edge images (an edge name plus the sub-edge index).
"""
from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from typing import Iterable, Sequence

from .builders import SpecError
from .graph_core import GraphError, InverseSystem, Projection, SubPoint, graph_from_parts

FORMAT_SYSTEM = "l1weaver.system/1"


def rational(value, field: str = "value") -> Fraction:
    """Parse an exact rational; floats are refused so no rounding slips in."""
    if isinstance(value, bool) or isinstance(value, float):
        raise SpecError(field, f"expected an exact rational string, got {value!r}")
    try:
        return Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise SpecError(field, f"not an exact rational: {value!r}") from None


def rstr(x) -> str:
    return str(Fraction(x))


def _point_doc(G, p: SubPoint):
    if p.is_vertex:
        return G.vertex_names[p.vertex]
    return [G.edge_names[p.edge], rstr(p.t)]


def system_to_doc(sys: InverseSystem) -> dict:
    levels = []
    for G in sys.levels:
        levels.append({
            "level": G.level,
            "vertices": [[name, rstr(h)] for name, h in zip(G.vertex_names, G.heights)],
            "edges": [[G.edge_names[e], G.vertex_names[G.tails[e]], G.vertex_names[G.heads[e]]]
                      for e in range(G.n_edges)],
        })
    projections = []
    for k, P in enumerate(sys.projections):
        lower = sys.levels[k]
        projections.append({
            "vertex_map": [_point_doc(lower, p) for p in P.vertex_map],
            "edge_map": [[lower.edge_names[E], s] for E, s in P.edge_map],
        })
    return {"format": FORMAT_SYSTEM, "m": sys.m, "label": sys.label,
            "window": [rstr(sys.window[0]), rstr(sys.window[1])],
            "levels": levels, "projections": projections}


def system_from_doc(doc: dict) -> InverseSystem:
    fmt = doc.get("format")
    if fmt != FORMAT_SYSTEM:
        raise SpecError("format", f"unsupported document format {fmt!r}")
    m = doc.get("m")
    if not isinstance(m, int) or m < 2:
        raise SpecError("m", "must be an integer at least 2")
    window = doc.get("window")
    if not isinstance(window, list) or len(window) != 2:
        raise SpecError("window", "expected [lo, hi]")
    window = (rational(window[0], "window[0]"), rational(window[1], "window[1]"))
    levels = []
    for k, L in enumerate(doc.get("levels") or []):
        where = f"levels[{k}]"
        try:
            verts = [(str(n), rational(h, f"{where}.vertices")) for n, h in L["vertices"]]
            edges = [(str(n), str(t), str(h)) for n, t, h in L["edges"]]
            levels.append(graph_from_parts(int(L["level"]), m, verts, edges))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(where, str(exc)) from None
    if not levels:
        raise SpecError("levels", "at least one level required")
    projections = []
    raw = doc.get("projections") or []
    if len(raw) != len(levels) - 1:
        raise SpecError("projections", f"expected {len(levels) - 1}, got {len(raw)}")
    for k, P in enumerate(raw):
        lower = levels[k]
        where = f"projections[{k}]"
        try:
            vmap = []
            for item in P["vertex_map"]:
                if isinstance(item, str):
                    vmap.append(SubPoint.at(lower.vertex_index[item]))
                else:
                    e = lower.edge_names.index(item[0])
                    vmap.append(lower.point(e, rational(item[1], f"{where}.vertex_map")))
            emap = [(lower.edge_names.index(name), int(s)) for name, s in P["edge_map"]]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(where, f"bad entry: {exc}") from None
        projections.append(Projection(tuple(vmap), tuple(emap)))
    try:
        return InverseSystem(m, tuple(levels), tuple(projections), window,
                             str(doc.get("label", "")))
    except GraphError as exc:
        raise SpecError("levels", str(exc)) from None


def dumps(doc) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


# DOT -------------------------------------------------------------------------------

def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(sys: InverseSystem, level: int | None = None) -> str:
    """One level as a directed multigraph.  Vertices of equal height share a
    rank, ranks run bottom to top by height, and edges point upward."""
    G = sys.graph(sys.top if level is None else level)
    title = f"{sys.label or 'system'} level {G.level}"
    out = [f"digraph {_quote(title)} {{",
           "  rankdir=BT;", "  node [shape=circle, fontsize=9];"]
    by_height: dict[Fraction, list[int]] = {}
    for v, h in enumerate(G.heights):
        by_height.setdefault(h, []).append(v)
    for h in sorted(by_height):
        names = " ".join(_quote(G.vertex_names[v]) for v in by_height[h])
        out.append(f"  {{ rank=same; {names} }}  // height {h}")
    for v in range(G.n_vertices):
        name, h = G.vertex_names[v], str(G.heights[v])
        label = _quote(name)[:-1] + "\\n" + h + '"'
        out.append(f"  {_quote(name)} [label={label}, h={_quote(h)}];")
    for e in range(G.n_edges):
        out.append(f"  {_quote(G.vertex_names[G.tails[e]])} -> {_quote(G.vertex_names[G.heads[e]])}"
                   f" [key={_quote(G.edge_names[e])}, arrowhead=normal];")
    out.append("}")
    return "\n".join(out) + "\n"


# CSV -------------------------------------------------------------------------------

def write_csv(rows: Iterable[Sequence], header: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in rows:
        w.writerow([rstr(x) if isinstance(x, (Fraction, int)) and not isinstance(x, bool)
                    else x for x in row])
    return buf.getvalue()


def read_csv(text: str) -> list[list[str]]:
    return [row for row in csv.reader(io.StringIO(text)) if row and any(c.strip() for c in row)]


def matrix_to_csv(ids: Sequence[str], M) -> str:
    return write_csv(([i, *row] for i, row in zip(ids, M)), ["id", *ids])


def read_points(text: str) -> list[str]:
    rows = read_csv(text)
    if rows and rows[0][0].strip().lower() in ("id", "point"):
        rows = rows[1:]
    return [r[0].strip() for r in rows]


def read_values(text: str, ids: Sequence[str], what: str) -> list[Fraction]:
    """Per-point values as ``id,value`` rows, or a bare column in point order."""
    rows = read_csv(text)
    if rows and not _is_rational(rows[0][-1]):
        rows = rows[1:]
    if rows and len(rows[0]) >= 2:
        got = {r[0].strip(): rational(r[1].strip(), f"{what}[{r[0].strip()}]") for r in rows}
        missing = [i for i in ids if i not in got]
        if missing:
            raise SpecError(what, f"no value for point {missing[0]!r}")
        return [got[i] for i in ids]
    if len(rows) != len(ids):
        raise SpecError(what, f"expected {len(ids)} values, got {len(rows)}")
    return [rational(r[0].strip(), f"{what}[{k}]") for k, r in enumerate(rows)]


def read_matrix(text: str, ids: Sequence[str], what: str = "distances") -> list[list[Fraction]]:
    """Square matrix, with or without an id header row and id column."""
    rows = read_csv(text)
    n = len(ids)
    if rows and not all(_is_rational(c) for c in rows[0]):
        rows = rows[1:]
    if len(rows) != n:
        raise SpecError(what, f"expected {n} rows, got {len(rows)}")
    out = []
    for a, r in enumerate(rows):
        cells = r[1:] if len(r) == n + 1 else r
        if len(cells) != n:
            raise SpecError(f"{what}[{a}]", f"expected {n} entries, got {len(cells)}")
        out.append([rational(c.strip(), f"{what}[{a}][{b}]") for b, c in enumerate(cells)])
    return out


def _is_rational(cell: str) -> bool:
    try:
        Fraction(cell.strip())
        return True
    except (ValueError, ZeroDivisionError):
        return False
