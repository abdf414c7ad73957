"""Finite-dimensional l1 embeddings from slice measures, and distortion reports.

Each point gets one coordinate per slice: the slice's mass when the point is
on the GT side, else nothing (coordinates are sparse).  For a factorized
measure the slices are never listed; instead children are enumerated only as
far as they differ on the requested points, and slices with the same GT set
are merged into one coordinate carrying their total mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from math import lcm
from typing import Hashable, Sequence

import numpy as np

from .cut_metrics import (PointFrame, _locate, _strict_descendants, cut_matrix,
                          seeded_bands, WindowError, _height)
from .graph_core import InverseSystem, SubPoint
from .metrics import dbar_matrix, hop_distances, window_vertices
from .slices import FactorizedMeasure, SliceError, SliceMeasure, sigma_prime, sigma_top


@dataclass
class EmbeddingVector:
    owner: Hashable
    coordinates: dict = field(default_factory=dict)

    def l1(self, other: "EmbeddingVector") -> Fraction:
        keys = self.coordinates.keys() | other.coordinates.keys()
        get_a, get_b = self.coordinates.get, other.coordinates.get
        return sum((abs(get_a(k, 0) - get_b(k, 0)) for k in keys), Fraction(0))

    def sorted_items(self):
        return sorted(self.coordinates.items())


def _check_points(sys, i, points, seeds):
    bands = seeded_bands(sys, seeds)
    for x in points:
        h = _height(sys, i, x)
        if not any(lo <= h <= hi for lo, hi in bands):
            raise WindowError(f"point {x!r} at height {h} is outside the seeded region")


def embed_level(sys: InverseSystem, i: int, mu, points: Sequence, seeds=None,
                max_combinations: int = 1 << 16) -> list[EmbeddingVector]:
    if mu.level != i:
        raise SliceError(f"measure lives at level {mu.level}, not {i}")
    _check_points(sys, i, points, seeds)
    if isinstance(mu, FactorizedMeasure):
        return _embed_factorized(sys, mu, points, max_combinations)
    return _embed_materialized(sys, mu, points)


def _embed_materialized(sys, mu: SliceMeasure, points) -> list[EmbeddingVector]:
    i = mu.level
    sdesc = _strict_descendants(sys, i)
    locs = [_locate(sys, i, x) for x in points]
    vecs = [EmbeddingVector(x) for x in points]
    for S, mass in mu.items():
        gt = smask = 0
        for w in S:
            gt |= sdesc[w]
            smask |= 1 << w
        above = gt | smask
        for vec, (x, deep) in zip(vecs, locs):
            if (above if deep else gt) >> x & 1:
                vec.coordinates[S] = mass
    return vecs


def _embed_factorized(sys, fm: FactorizedMeasure, points, limit: int) -> list[EmbeddingVector]:
    i = fm.level
    locs = [_locate(sys, i, x) for x in points]
    if any(d for _, d in locs):
        raise SliceError("points deeper than X_i' need a materialized measure")
    ids = sorted({x for x, _ in locs})
    frame = PointFrame(sys, i, ids)
    classes: dict[tuple[int, ...], Fraction] = {}
    for S, mass, ks in fm.parts():
        sure = 0
        for k in ks:
            sure |= k.sure_leq
        uncertain = 0
        choices = []
        for k in ks:
            pts = [x for x in k.gt_weight if x in frame.index and not sure >> x & 1]
            if not pts:
                continue
            for x in pts:
                uncertain |= 1 << x
            # children of k merged by the GT pattern they induce on pts
            pattern: dict[int, int] = {}
            for a, wt in zip(k.child_anc, k.weights):
                gt = 0
                for x in pts:
                    if not a >> x & 1:
                        gt |= 1 << x
                pattern[gt] = pattern.get(gt, 0) + wt
            choices.append([(g, Fraction(wt, k.denominator)) for g, wt in pattern.items()])
        base = frame.mask & ~sure & ~uncertain
        total = 1
        for c in choices:
            total *= len(c)
        if total > limit:
            raise SliceError(f"{total} cut classes under one parent slice exceed the limit {limit}")
        for combo in product(*choices):
            gt, p = base, mass
            for g, q in combo:
                gt |= g
                p *= q
            key = tuple(x for x in ids if gt >> x & 1)
            classes[key] = classes.get(key, 0) + p
    by_id: dict[int, dict] = {x: {} for x in ids}
    for key, p in classes.items():
        if not key or p == 0:
            continue
        for x in key:
            by_id[x][key] = p
    return [EmbeddingVector(x, dict(by_id[loc[0]])) for x, loc in zip(points, locs)]


def l1_matrix(vectors: Sequence[EmbeddingVector]) -> list[list[Fraction]]:
    """Pairwise l1 distances, summed coordinate by coordinate over integers."""
    keys: dict = {}
    D = 1
    for v in vectors:
        for k, val in v.coordinates.items():
            keys.setdefault(k, len(keys))
            D = lcm(D, Fraction(val).denominator)
    n = len(vectors)
    biggest = sum(max((abs(Fraction(val)) for val in v.coordinates.values()), default=0)
                  for v in vectors)
    dtype = np.int64 if biggest * D * max(len(keys), 1) < (1 << 62) else object
    X = np.zeros((n, len(keys)), dtype=dtype)
    for r, v in enumerate(vectors):
        for k, val in v.coordinates.items():
            val = Fraction(val)
            X[r, keys[k]] = val.numerator * (D // val.denominator)
    out = [[Fraction(0)] * n for _ in range(n)]
    for a in range(n):
        row = np.abs(X[a + 1:] - X[a]).sum(axis=1) if a + 1 < n else []
        for off, val in enumerate(row):
            b = a + 1 + off
            out[a][b] = out[b][a] = Fraction(int(val), D)
    return out


# distortion ----------------------------------------------------------------------

@dataclass
class DistortionReport:
    level: int
    pairs: int
    min_ratio: Fraction
    max_ratio: Fraction
    argmin: tuple
    argmax: tuple
    history: list[tuple[int, Fraction]]
    dbar_min: Fraction
    monotone_pairs: int
    monotone_off: list[tuple]
    stability_ok: bool
    lipschitz_ok: bool

    @property
    def ok(self) -> bool:
        return (self.lipschitz_ok and self.min_ratio > 0 and not self.monotone_off
                and self.stability_ok)

    def as_dict(self) -> dict:
        return {"level": self.level, "pairs": self.pairs, "ok": self.ok,
                "min_ratio": str(self.min_ratio), "max_ratio": str(self.max_ratio),
                "argmin": list(self.argmin), "argmax": list(self.argmax),
                "history": [{"level": k, "min_ratio": str(r)} for k, r in self.history],
                "dbar_min": str(self.dbar_min), "monotone_pairs": self.monotone_pairs,
                "monotone_off": [list(p) for p in self.monotone_off],
                "stability_ok": self.stability_ok, "lipschitz_ok": self.lipschitz_ok}


def pulled_back_cut_matrix(sys: InverseSystem, level: int, verts: Sequence[int], mu=None):
    """Cut distances of Sigma_level' between the level images of top vertices."""
    top = sys.top
    if level == top:
        mu = sigma_top(sys, top) if mu is None else mu
        return cut_matrix(sys, mu, [SubPoint.at(v) for v in verts]).fractions()
    imgs = sys.vertex_images(top, level)
    mu = sigma_prime(sys, level) if mu is None else mu
    return cut_matrix(sys, mu, [imgs[v] for v in verts]).fractions()


def distortion_report(sys: InverseSystem, i: int | None = None,
                      vertices: Sequence[int] | None = None, dbar=None,
                      measure=None) -> DistortionReport:
    """Ratios of the level-i cut metric (pulled back) to the star-chain metric
    over pairs of top-level window vertices, with the per-level history."""
    i = sys.top if i is None else i
    verts = window_vertices(sys) if vertices is None else list(vertices)
    db = dbar_matrix(sys, verts) if dbar is None else dbar
    G = sys.graph(sys.top)
    n = len(verts)
    dmin = min((db[a][b] for a in range(n) for b in range(a + 1, n)), default=Fraction(0))
    history = []
    final = None
    for k in range(sys.base_level, i + 1):
        rho = pulled_back_cut_matrix(sys, k, verts, measure if k == i else None)
        ratios = [(rho[a][b] / db[a][b], a, b) for a in range(n) for b in range(a + 1, n)]
        history.append((k, min(r for r, _, _ in ratios)))
        if k == i:
            final = (rho, ratios)
    rho, ratios = final
    lo = min(ratios)
    hi = max(ratios)
    names = G.vertex_names
    mono, off = 0, []
    for r, a, b in ratios:
        if G.reaches(verts[a], verts[b]) or G.reaches(verts[b], verts[a]):
            mono += 1
            if r != 1:
                off.append((names[verts[a]], names[verts[b]], str(r)))
    stable = True
    for (k0, r0), (k1, r1) in zip(history, history[1:]):
        if r1 < r0 - Fraction(8, sys.m ** k1) / dmin:
            stable = False
    return DistortionReport(i, len(ratios), lo[0], hi[0],
                            (names[verts[lo[1]]], names[verts[lo[2]]]),
                            (names[verts[hi[1]]], names[verts[hi[2]]]),
                            history, dmin, mono, off, stable, hi[0] <= 1)


# geodesic isometry -----------------------------------------------------------------

@dataclass
class GeodesicReport:
    level: int
    pairs: int
    violations: list[tuple] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def geodesic_isometry_check(sys: InverseSystem, i: int | None = None,
                            vectors: Sequence[EmbeddingVector] | None = None) -> GeodesicReport:
    """l1 distance against path length and height difference on every pair of
    window vertices of X_i that share a maximal directed path."""
    i = sys.top if i is None else i
    G = sys.graph(i)
    verts = window_vertices(sys, i)
    if vectors is None:
        vectors = embed_level(sys, i, sigma_top(sys, i), verts)
    d = l1_matrix(vectors)
    report = GeodesicReport(i, 0)
    for a, u in enumerate(verts):
        hops = hop_distances(G, u)
        for b, v in enumerate(verts):
            if a == b or not G.reaches(u, v):
                continue
            report.pairs += 1
            rise = G.heights[v] - G.heights[u]
            path = hops[v] * G.edge_length
            if not d[a][b] == path == rise:
                report.violations.append((G.vertex_names[u], G.vertex_names[v],
                                          str(d[a][b]), str(path), str(rise)))
    return report
