"""Sides of points relative to slices, exact cut metrics and the estimate checks.

A point x is on the LEQ side of a slice S when x lies in S or below some
element, and on the GT side when some element lies strictly below x.  The cut
metric of a slice measure charges the mass of every slice whose sides differ
at the two points.

Cut matrices are computed from GT indicator rows: with s(x) the GT mass at x
and G the weighted Gram matrix of the rows, d(x, y) = s(x) + s(y) - 2 G(x, y).
For a one-step factorized measure the rows hold GT probabilities, and the
product form only fails for pairs sharing an uncertain vertex; those get an
explicit correction.  All arithmetic is on integers.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import lcm
from typing import Iterable, Sequence

import numpy as np

from .graph_core import InverseSystem, SubPoint, project, subdivision_vertex
from .metrics import closed_star_owners, trimmed_star_owners
from .slices import (FactorizedMeasure, InvalidSlice, Slice, SliceError, SliceMeasure,
                     _descend, default_seeds, diffuse, preimage_vertices, sigma_prime, sigma_top,
                     vertex_kernel)


class SideTag(Enum):
    LEQ = "leq"
    GT = "gt"


class WindowError(SliceError):
    """A query point is too close to the edge of the seeded region."""


def _prime_id(sys: InverseSystem, i: int, x) -> int:
    if isinstance(x, SubPoint):
        return subdivision_vertex(sys.graph(i), x, 1)
    return int(x)


def _strict_descendants(sys: InverseSystem, i: int):
    def build():
        return tuple(d ^ (1 << w) for w, d in enumerate(sys.prime(i).descendants))
    return sys._cached(("sdesc", i), build)


def side_of(sys: InverseSystem, i: int, x, S: Slice) -> SideTag:
    """Side of a point of X_i' (id or SubPoint of depth <= 1) relative to S."""
    P = sys.prime(i)
    x = _prime_id(sys, i, x)
    smask = 0
    for w in S:
        smask |= 1 << w
    leq = bool(P.descendants[x] & smask)
    gt = bool((P.ancestors[x] ^ (1 << x)) & smask)
    if leq == gt:
        raise InvalidSlice(f"point {P.vertex_names[x]} is on "
                           f"{'both sides' if leq else 'neither side'} of {_slice_names(P, S)}")
    return SideTag.LEQ if leq else SideTag.GT


def _slice_names(P, S) -> str:
    return "{" + ", ".join(P.vertex_names[w] for w in S) + "}"


# window sufficiency ------------------------------------------------------------

def seeded_bands(sys: InverseSystem, seeds: Iterable[int] | None = None) -> list[tuple[Fraction, Fraction]]:
    """Height intervals spanned by runs of consecutive seeds on X_0'.

    A point whose height lies in one of them is at height distance at least
    1/m inside the union of the seeds' open stars."""
    P = sys.prime(sys.base_level)
    seeds = default_seeds(sys) if seeds is None else sorted(set(seeds))
    hs = sorted({P.heights[v] for v in seeds})
    step = P.edge_length
    bands: list[tuple[Fraction, Fraction]] = []
    for h in hs:
        if bands and h - bands[-1][1] <= step:
            bands[-1] = (bands[-1][0], h)
        else:
            bands.append((h, h))
    return bands


def check_window(sys: InverseSystem, i: int, points: Sequence[int], seeds=None) -> None:
    P = sys.prime(i)
    bands = seeded_bands(sys, seeds)
    for x in points:
        h = P.heights[x]
        if not any(lo <= h <= hi for lo, hi in bands):
            raise WindowError(f"point {P.vertex_names[x]} at height {h} is outside the "
                              f"seeded region {[(str(a), str(b)) for a, b in bands]}")


def window_points(sys: InverseSystem, i: int) -> list[int]:
    """Vertices of X_i' whose heights lie in the window."""
    P = sys.prime(i)
    lo, hi = sys.window
    return [x for x in range(P.n_vertices) if lo <= P.heights[x] <= hi]


# exact weighted Gram ---------------------------------------------------------------

_DIGIT = 24


def exact_gram(rows: np.ndarray, weights: Sequence[int]):
    """Exact s = w @ B and G = B^T diag(w) B for nonnegative integer B and w.

    Weights are cut into 24-bit digits and row blocks are sized so that every
    float64 partial sum stays below 2**53, hence exact.
    """
    B = np.asarray(rows, dtype=np.int64)
    K, n = B.shape
    s = np.zeros(n, dtype=object)
    G = np.zeros((n, n), dtype=object)
    if K == 0:
        return s, G
    w = [int(x) for x in weights]
    if min(w) < 0 or int(B.min()) < 0:
        raise ValueError("exact_gram needs nonnegative inputs")
    bmax = max(int(B.max()), 1)
    block = max(1, (1 << (53 - _DIGIT)) // (bmax * bmax))
    if bmax * bmax >= 1 << (53 - _DIGIT):
        raise ValueError("row entries too large for exact float accumulation")
    digits = max(1, -(-max(w).bit_length() // _DIGIT))
    mask = (1 << _DIGIT) - 1
    wa = np.array(w, dtype=object)
    for start in range(0, K, block):
        Bf = B[start:start + block].astype(np.float64)
        wb = wa[start:start + block]
        for d in range(digits):
            wd = np.array([(x >> (_DIGIT * d)) & mask for x in wb], dtype=np.float64)
            if not wd.any():
                continue
            sd = np.rint(wd @ Bf).astype(np.int64).astype(object)
            Gd = np.rint((Bf.T * wd) @ Bf).astype(np.int64).astype(object)
            shift = _DIGIT * d
            s += sd * (1 << shift)
            G += Gd * (1 << shift)
    return s, G


# cut matrices ----------------------------------------------------------------------

class PointFrame:
    """A list of distinct X_i' ids with helpers for bit extraction."""

    def __init__(self, sys: InverseSystem, level: int, ids: Sequence[int]):
        self.sys = sys
        self.level = level
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("points in a frame must be distinct")
        self.index = {x: k for k, x in enumerate(self.ids)}
        self.mask = 0
        for x in self.ids:
            self.mask |= 1 << x
        self._nbytes = (sys.prime(level).n_vertices + 7) // 8
        self._arr = np.array(self.ids, dtype=np.intp)
        self._kernels: dict[int, tuple] = {}

    def __len__(self):
        return len(self.ids)

    def bits(self, mask: int) -> np.ndarray:
        raw = np.frombuffer((mask & self.mask).to_bytes(self._nbytes, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[self._arr].astype(bool)

    def kernel_data(self, kernel, L: int):
        """(sure mask, partial indices, partial GT numerators, joint GT block), all over L."""
        key = id(kernel)
        hit = self._kernels.get(key)
        if hit is None or hit[0] is not kernel or hit[1] != L:
            scale = L // kernel.denominator
            pts = [x for x in kernel.gt_weight if x in self.index]
            idx = np.array([self.index[x] for x in pts], dtype=np.intp)
            vals = np.array([kernel.gt_weight[x] * scale for x in pts], dtype=np.int64)
            both = np.array([[kernel.both_gt_weight(x, y) * scale * L for y in pts] for x in pts],
                            dtype=np.int64).reshape(len(pts), len(pts))
            hit = (kernel, L, self.bits(kernel.sure_leq), idx, vals, both)
            self._kernels[key] = hit
        return hit[2], hit[3], hit[4], hit[5]


@dataclass
class CutMatrix:
    """Exact pairwise cut distances ``numerators[a][b] / denominator``."""

    level: int
    points: list[int]
    numerators: np.ndarray
    denominator: int
    _fractions: list | None = field(default=None, repr=False)

    def __getitem__(self, ab) -> Fraction:
        a, b = ab
        return Fraction(int(self.numerators[a, b]), self.denominator)

    def fractions(self) -> list[list[Fraction]]:
        if self._fractions is None:
            D = self.denominator
            self._fractions = [[Fraction(int(v), D) for v in row] for row in self.numerators]
        return self._fractions

    def index(self, x: int) -> int:
        return self.points.index(x)


def _materialized_numerators(sys, mu: SliceMeasure, frame: PointFrame, deep: PointFrame | None,
                             validate: bool):
    # ``deep`` holds lower ends of points strictly inside sub-edges of X_i':
    # such a point is GT iff its lower end is GT or belongs to the slice
    i = mu.level
    P = sys.prime(i)
    sdesc = _strict_descendants(sys, i)
    anc = P.ancestors
    Q = 1
    for _, mass in mu.items():
        Q = lcm(Q, mass.denominator)
    groups: dict[tuple[int, int], int] = {}
    fm = frame.mask
    dm = deep.mask if deep is not None else 0
    for S, mass in mu.items():
        gt = leq = smask = 0
        for w in S:
            gt |= sdesc[w]
            leq |= anc[w]
            smask |= 1 << w
        if validate and ((gt & leq & fm) or (gt | leq) & fm != fm):
            bad = (gt & leq & fm) or (fm & ~(gt | leq))
            x = (bad & -bad).bit_length() - 1
            raise InvalidSlice(f"point {P.vertex_names[x]} is not on exactly one side of "
                               f"{_slice_names(P, S)}")
        key = (gt & fm, (gt | smask) & dm)
        groups[key] = groups.get(key, 0) + mass.numerator * (Q // mass.denominator)
    keys = list(groups)
    nd = len(deep) if deep is not None else 0
    B = np.zeros((len(keys), len(frame) + nd), dtype=np.int64)
    for r, (kv, kd) in enumerate(keys):
        B[r, :len(frame)] = frame.bits(kv)
        if nd:
            B[r, len(frame):] = deep.bits(kd)
    s, G = exact_gram(B, [groups[k] for k in keys])
    num = s[:, None] + s[None, :] - 2 * G
    return num, Q


def _factorized_numerators(sys, fm_: FactorizedMeasure, frame: PointFrame):
    parts = list(fm_.parts())
    L = 1
    Q = 1
    for _, mass, ks in parts:
        Q = lcm(Q, mass.denominator)
        for k in ks:
            L = lcm(L, k.denominator)
    n = len(frame)
    B = np.empty((len(parts), n), dtype=np.int64)
    weights = []
    pooled: dict[int, list] = {}       # id(kernel) -> [kernel, summed weight]
    explicit = []                      # (kernel, weight, alive mask) when a partial point is zeroed
    for r, (_, mass, ks) in enumerate(parts):
        wint = mass.numerator * (Q // mass.denominator)
        sure = np.zeros(n, dtype=bool)
        row = np.full(n, L, dtype=np.int64)
        data = [frame.kernel_data(k, L) for k in ks]
        for sk, _, _, _ in data:
            sure |= sk
        for k, (_, idx, vals, _) in zip(ks, data):
            if len(idx):
                row[idx] = vals
                if sure[idx].any():
                    explicit.append((k, wint, ~sure))
                else:
                    pooled.setdefault(id(k), [k, 0])[1] += wint
        row[sure] = 0
        B[r] = row
        weights.append(wint)
    s, G = exact_gram(B, weights)
    num = L * (s[:, None] + s[None, :]) - 2 * G
    # exact joint GT law for pairs uncertain under the same vertex
    for k, W in pooled.values():
        _correct(num, frame, k, L, W, None)
    for k, W, alive in explicit:
        _correct(num, frame, k, L, W, alive)
    np.fill_diagonal(num, 0)
    return num, Q * L * L


def _correct(num, frame, kernel, L, weight, alive):
    _, idx, vals, both = frame.kernel_data(kernel, L)
    if alive is not None:
        keep = alive[idx]
        idx, vals, both = idx[keep], vals[keep], both[np.ix_(keep, keep)]
    delta = -2 * weight * (both.astype(object) - np.outer(vals, vals).astype(object))
    num[np.ix_(idx, idx)] += delta


def _locate(sys: InverseSystem, i: int, x) -> tuple[int, bool]:
    """(X_i' id, deep) for a point of X_i; deep points report their lower end."""
    if not isinstance(x, SubPoint):
        return int(x), False
    G = sys.graph(i)
    if x.depth(sys.m) <= 1:
        return subdivision_vertex(G, x, 1), False
    s = int(x.t * sys.m)
    return subdivision_vertex(G, G.point(x.edge, Fraction(s, sys.m)), 1), True


def _height(sys: InverseSystem, i: int, x) -> Fraction:
    if isinstance(x, SubPoint):
        return sys.graph(i).height_of(x)
    return sys.prime(i).heights[int(x)]


def cut_matrix(sys: InverseSystem, mu, points: Sequence, seeds=None,
               validate: bool = True, check: bool = True) -> CutMatrix:
    """All pairwise cut distances of ``mu`` among points of level i.

    Points are X_i' ids or SubPoints of X_i; points deeper than X_i' need a
    materialized measure.
    """
    i = mu.level
    locs = [_locate(sys, i, x) for x in points]
    if check:
        bands = seeded_bands(sys, seeds)
        for x in points:
            h = _height(sys, i, x)
            if not any(lo <= h <= hi for lo, hi in bands):
                raise WindowError(f"point {x!r} at height {h} is outside the seeded region "
                                  f"{[(str(a), str(b)) for a, b in bands]}")
    uniq = sorted(set(locs), key=lambda t: (t[1], t[0]))
    flat = [x for x, d in uniq if not d]
    under = [x for x, d in uniq if d]
    frame = PointFrame(sys, i, flat)
    deep = PointFrame(sys, i, under) if under else None
    if isinstance(mu, FactorizedMeasure):
        if deep is not None:
            raise SliceError("points deeper than X_i' need a materialized measure")
        num, D = _factorized_numerators(sys, mu, frame)
    else:
        num, D = _materialized_numerators(sys, mu, frame, deep, validate)
    pos = {t: k for k, t in enumerate(uniq)}
    sel = np.array([pos[t] for t in locs], dtype=np.intp)
    if len(sel) != len(uniq) or (sel != np.arange(len(sel))).any():
        num = num[np.ix_(sel, sel)]
    return CutMatrix(i, list(points), num, D)


def cut_distance(sys: InverseSystem, mu, x1, x2, seeds=None) -> Fraction:
    return cut_matrix(sys, mu, [x1, x2], seeds)[0, 1]


def cut_distance_direct(sys: InverseSystem, mu: SliceMeasure, x1, x2) -> Fraction:
    """Slice-by-slice evaluation of the separation predicate (reference route)."""
    i = mu.level
    total = Fraction(0)
    for S, mass in mu.items():
        a, b = side_of(sys, i, x1, S), side_of(sys, i, x2, S)
        if a is not b:
            total += mass
    return total


# estimate verification -------------------------------------------------------------

@dataclass
class EstimateCheck:
    name: str
    passed: bool
    checked: int
    worst: Fraction | None = None
    bound: Fraction | None = None
    detail: str = ""

    def as_dict(self) -> dict:
        out = {"name": self.name, "passed": self.passed, "checked": self.checked}
        if self.worst is not None:
            out["worst"] = str(self.worst)
        if self.bound is not None:
            out["bound"] = str(self.bound)
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class EstimateReport:
    up_to_level: int
    checks: dict[str, EstimateCheck] = field(default_factory=dict)
    a_emp: Fraction | None = None
    a_sep: Fraction | None = None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def as_dict(self) -> dict:
        return {"up_to_level": self.up_to_level, "ok": self.ok,
                "A_emp": None if self.a_emp is None else str(self.a_emp),
                "A_sep": None if self.a_sep is None else str(self.a_sep),
                "checks": [c.as_dict() for c in self.checks.values()]}


ESTIMATES = ("normalization", "increment", "sides", "separation", "trimmed_star_lower",
             "edge", "star")


class _Levels:
    """Per-level measures and cut matrices shared by the checks."""

    def __init__(self, sys: InverseSystem, up_to: int, measures: dict | None):
        self.sys = sys
        self.up_to = up_to
        self.measures = dict(measures or {})
        self._cuts: dict = {}

    def measure(self, i: int):
        if i not in self.measures:
            self.measures[i] = sigma_top(self.sys, i)
        return self.measures[i]

    def materialized(self, i: int) -> SliceMeasure:
        mu = self.measure(i)
        return mu if isinstance(mu, SliceMeasure) else sigma_prime(self.sys, i)

    def cut(self, i: int, ids: Sequence[int]) -> CutMatrix:
        key = (i, tuple(ids))
        if key not in self._cuts:
            self._cuts[key] = cut_matrix(self.sys, self.measure(i), ids, check=False)
        return self._cuts[key]

    def vertices(self, j: int) -> list[int]:
        G = self.sys.graph(j)
        lo, hi = self.sys.window
        return [v for v in range(G.n_vertices) if lo <= G.heights[v] <= hi]

    def projected_ids(self, j: int, i: int, verts: Sequence[int]) -> list[int]:
        # ids in X_i' of the level-i images of level-(i+1) vertices
        assert j == i + 1
        imgs = self.sys.vertex_images(j, i)
        G = self.sys.graph(i)
        return [subdivision_vertex(G, imgs[v], 1) for v in verts]


def _check_normalization(lv: _Levels) -> EstimateCheck:
    sys = lv.sys
    worst, count, detail = Fraction(0), 0, ""
    for i in range(sys.base_level, lv.up_to + 1):
        target = Fraction(1, sys.m ** (i + 1))
        got = lv.measure(i).containing_mass()
        P = sys.prime(i)
        for x in window_points(sys, i):
            count += 1
            dev = abs(got.get(x, Fraction(0)) - target)
            if dev > worst:
                worst = dev
                detail = f"level {i} point {P.vertex_names[x]}: {got.get(x, 0)} != {target}"
    return EstimateCheck("normalization", worst == 0, count, worst, Fraction(0), detail)


def _check_increment(lv: _Levels) -> EstimateCheck:
    sys = lv.sys
    worst_ratio, count, detail = Fraction(0), 0, ""
    ok = True
    for i in range(sys.base_level, lv.up_to):
        bound = Fraction(4, sys.m ** (i + 1))
        verts = lv.vertices(i + 1)
        proj = lv.projected_ids(i + 1, i, verts)
        fine = lv.cut(i + 1, verts)
        coarse_pts = sorted(set(proj))
        coarse = lv.cut(i, coarse_pts)
        pos = {x: k for k, x in enumerate(coarse_pts)}
        sel = np.array([pos[x] for x in proj], dtype=np.intp)
        cnum = coarse.numerators[np.ix_(sel, sel)]
        # compare a/D1 with b/D2 over a common denominator
        D = lcm(fine.denominator, coarse.denominator)
        diff = np.abs(fine.numerators * (D // fine.denominator) - cnum * (D // coarse.denominator))
        n = len(verts)
        count += n * (n - 1) // 2
        k = np.unravel_index(np.argmax(diff), diff.shape) if n else (0, 0)
        top = Fraction(int(diff[k]), D) if n else Fraction(0)
        if top > bound:
            ok = False
        if top / bound > worst_ratio:
            worst_ratio = top / bound
            G = sys.graph(i + 1)
            detail = (f"level {i}->{i + 1} pair {G.vertex_names[verts[k[0]]]}, "
                      f"{G.vertex_names[verts[k[1]]]}: change {top}")
    return EstimateCheck("increment", ok, count, worst_ratio, Fraction(1), detail)


def _kernel_rows(frame: PointFrame, ks, L: int):
    """GT probabilities (over L) at frame points for the union of independent
    children of ``ks``, the joint GT matrix (over L*L) and child membership."""
    n = len(frame)
    sure = np.zeros(n, dtype=bool)
    row = np.full(n, L, dtype=np.int64)
    member = np.zeros(n, dtype=bool)
    blocks = []
    for k in ks:
        sk, idx, vals, both = frame.kernel_data(k, L)
        sure |= sk
        if len(idx):
            row[idx] = vals
            blocks.append((idx, both))
        for x in k.member_weight:
            if x in frame.index:
                member[frame.index[x]] = True
    row[sure] = 0
    joint = np.outer(row, row)
    for idx, both in blocks:
        live = ~sure[idx]
        idx, both = idx[live], both[np.ix_(live, live)]
        joint[np.ix_(idx, idx)] = both
    return row, joint, member


def _descendant_parents(sys, i: int, S: Slice, j: int) -> SliceMeasure:
    """Probability measure on the level-(j-1) descendants of S."""
    mu = SliceMeasure(i, {S: Fraction(1)})
    for k in range(i, j - 1):
        mu = diffuse(sys, k, mu)
    return mu


def _image_sides(sys, i: int, S: Slice, imgs, verts):
    """GT indicator of level-i images relative to S, and whether each image
    lies in the open star (in X_i') of an element of S."""
    G = sys.graph(i)
    sdesc = _strict_descendants(sys, i)
    gt = smask = 0
    for w in S:
        gt |= sdesc[w]
        smask |= 1 << w
    side = np.zeros(len(verts), dtype=bool)
    star = np.zeros(len(verts), dtype=bool)
    m = sys.m
    for k, v in enumerate(verts):
        p = imgs[v]
        if p.depth(m) <= 1:
            x = subdivision_vertex(G, p, 1)
            side[k] = bool(gt >> x & 1)
            star[k] = bool(smask >> x & 1)
            continue
        # strictly inside a sub-edge of X_i': GT iff its lower end is GT or in S
        s = int(p.t * m)
        lo = subdivision_vertex(G, G.point(p.edge, Fraction(s, m)), 1)
        hi = subdivision_vertex(G, G.point(p.edge, Fraction(s + 1, m)), 1)
        side[k] = bool((gt | smask) >> lo & 1)
        star[k] = bool(smask >> lo & 1 or smask >> hi & 1)
    return side, star


def _check_sides_and_separation(lv: _Levels):
    """Persistence of sides one level down, and of separation to every depth.

    Sides: for S in the support of Sigma_i' and a window vertex x' of X_{i+1}
    whose image lies outside S, every child of S puts x' on the image's side
    and never contains x'.  Separation: for pairs whose images S separates
    with at least one image outside the open stars of S, the probability that
    a level-j descendant of S separates the lifts; its minimum is A_sep.
    """
    sys = lv.sys
    side_ok, side_count, side_detail = True, 0, ""
    a_sep, sep_count, sep_detail = None, 0, ""
    for i in range(sys.base_level, lv.up_to):
        mu_i = lv.materialized(i)
        for j in range(i + 1, lv.up_to + 1):
            verts = lv.vertices(j)
            names = sys.graph(j).vertex_names
            imgs = sys.vertex_images(j, i)
            frame = PointFrame(sys, j, verts)
            for S, _ in mu_i.items():
                side_i, star_i = _image_sides(sys, i, S, imgs, verts)
                qualify = (side_i[:, None] != side_i[None, :]) & ~(star_i[:, None] & star_i[None, :])
                parents = _descendant_parents(sys, i, S, j)
                plan = []
                D = L = 1
                for T, pm in parents.items():
                    ks = [vertex_kernel(sys, j, w) for w in preimage_vertices(sys, j - 1, T)]
                    plan.append((pm, ks))
                    D = lcm(D, pm.denominator)
                    for k in ks:
                        L = lcm(L, k.denominator)
                if D * 2 * L * L >= 1 << 62:
                    raise SliceError("descendant measure denominators too large for int64")
                acc = np.zeros((len(verts), len(verts)), dtype=np.int64)
                for pm, ks in plan:
                    row, joint, member = _kernel_rows(frame, ks, L)
                    if j == i + 1:
                        outside = ~star_i
                        side_count += int(outside.sum())
                        bad = outside & ((row != np.where(side_i, L, 0)) | member)
                        if bad.any():
                            side_ok = False
                            k = int(np.argmax(bad))
                            side_detail = (f"level {i} slice {_slice_names(sys.prime(i), S)} "
                                           f"vertex {names[verts[k]]}")
                    sep = L * (row[:, None] + row[None, :]) - 2 * joint
                    acc += sep * (pm.numerator * (D // pm.denominator))
                if not qualify.any():
                    continue
                sep_count += int(qualify.sum()) // 2
                masked = np.where(qualify, acc, np.iinfo(np.int64).max)
                a, b = np.unravel_index(int(np.argmin(masked)), masked.shape)
                cand = Fraction(int(acc[a, b]), D * L * L)
                if a_sep is None or cand < a_sep:
                    a_sep = cand
                    sep_detail = (f"levels {i}->{j} slice {_slice_names(sys.prime(i), S)} "
                                  f"pair {names[verts[a]]}, {names[verts[b]]}")
    sides = EstimateCheck("sides", side_ok, side_count, detail=side_detail)
    sep = EstimateCheck("separation", a_sep is None or a_sep > 0, sep_count, a_sep,
                        Fraction(0), sep_detail)
    return sides, sep, a_sep


def _check_trimmed_lower(lv: _Levels):
    """Smallest d_j * m^(i+2) over pairs whose level-i images share no trimmed star."""
    sys = lv.sys
    best, count, detail = None, 0, ""
    for j in range(sys.base_level + 1, lv.up_to + 1):
        verts = lv.vertices(j)
        cm = lv.cut(j, verts)
        for i in range(sys.base_level, j):
            G = sys.graph(i)
            imgs = sys.vertex_images(j, i)
            owners = [set(trimmed_star_owners(G, imgs[v])) for v in verts]
            scale = sys.m ** (i + 2)
            for a in range(len(verts)):
                for b in range(a + 1, len(verts)):
                    if owners[a] & owners[b]:
                        continue
                    count += 1
                    val = cm[a, b] * scale
                    if best is None or val < best:
                        best = val
                        H = sys.graph(j)
                        detail = (f"levels {i}->{j} pair {H.vertex_names[verts[a]]}, "
                                  f"{H.vertex_names[verts[b]]}")
    check = EstimateCheck("trimmed_star_lower", best is None or best > 0, count, best,
                          Fraction(0), detail)
    return check, best


def _edge_sets(G, p: SubPoint) -> set:
    if p.edge is not None:
        return {p.edge}
    return set(G.in_edges[p.vertex]) | set(G.out_edges[p.vertex])


def _check_edge_star(lv: _Levels):
    sys = lv.sys
    results = {}
    for name in ("edge", "star"):
        worst, count, detail, ok = Fraction(0), 0, "", True
        for j in range(sys.base_level, lv.up_to + 1):
            pts = window_points(sys, j)
            cm = lv.cut(j, pts)
            frac = cm.fractions()
            prime_pts = [sys.prime_point(j, x) for x in pts]
            for i in range(sys.base_level, j + 1):
                G = sys.graph(i)
                imgs = [project(sys, j, i, p) for p in prime_pts]
                if name == "edge":
                    sets = [_edge_sets(G, p) for p in imgs]
                    bound = Fraction(1, sys.m ** i)
                else:
                    sets = [set(closed_star_owners(G, p)) for p in imgs]
                    bound = Fraction(2, sys.m ** i)
                for a in range(len(pts)):
                    row = frac[a]
                    for b in range(a + 1, len(pts)):
                        if sets[a] & sets[b]:
                            count += 1
                            r = row[b] / bound
                            if r > worst:
                                worst = r
                                P = sys.prime(j)
                                detail = (f"level {i} over {j}: {P.vertex_names[pts[a]]}, "
                                          f"{P.vertex_names[pts[b]]} at {row[b]}")
                            if r > 1:
                                ok = False
        results[name] = EstimateCheck(name, ok, count, worst, Fraction(1), detail)
    return results["edge"], results["star"]


def verify_estimates(sys: InverseSystem, up_to_level: int | None = None,
                     which: Iterable[str] | None = None,
                     measures: dict | None = None) -> EstimateReport:
    """Run the requested estimate checks exhaustively up to ``up_to_level``.

    ``measures`` replaces the computed measure at chosen levels (used to feed
    deliberately corrupted input through the checks).
    """
    up_to = sys.top if up_to_level is None else up_to_level
    if not sys.base_level <= up_to <= sys.top:
        raise SliceError(f"level {up_to} outside {sys.base_level}..{sys.top}")
    which = set(ESTIMATES if which is None else which)
    unknown = which - set(ESTIMATES)
    if unknown:
        raise ValueError(f"unknown estimates: {', '.join(sorted(unknown))}")
    lv = _Levels(sys, up_to, measures)
    report = EstimateReport(up_to)
    if "normalization" in which:
        report.checks["normalization"] = _check_normalization(lv)
    if "increment" in which:
        report.checks["increment"] = _check_increment(lv)
    if which & {"sides", "separation"}:
        sides, sep, a_sep = _check_sides_and_separation(lv)
        if "sides" in which:
            report.checks["sides"] = sides
        if "separation" in which:
            report.checks["separation"] = sep
        report.a_sep = a_sep
    if "trimmed_star_lower" in which:
        check, a_emp = _check_trimmed_lower(lv)
        report.checks["trimmed_star_lower"] = check
        report.a_emp = a_emp
    if which & {"edge", "star"}:
        edge, star = _check_edge_star(lv)
        if "edge" in which:
            report.checks["edge"] = edge
        if "star" in which:
            report.checks["star"] = star
    return report


def corrupt_measure(mu: SliceMeasure, factor=Fraction(3, 2)) -> SliceMeasure:
    """Copy of ``mu`` with the mass of its first slice scaled (negative control)."""
    items = mu.items()
    support = dict(items)
    if items:
        S = items[0][0]
        support[S] = support[S] * factor
    return SliceMeasure(mu.level, support)


def sampled_normalization(sys: InverseSystem, i: int, draws: int, seed: int,
                          sigmas: int = 5) -> EstimateCheck:
    """Monte Carlo version of the normalization check for levels too deep to
    enumerate.  Each seed slice is diffused ``draws`` times from one stream; the
    containing mass of every window point must lie within ``sigmas`` standard
    deviations of m^-(i+1), with the variance bounded under that value.  The
    default is wide because thousands of points are tested at once."""
    if draws < 1:
        raise ValueError("need at least one draw")
    i0 = sys.base_level
    seeds = default_seeds(sys)
    rng = random.Random(seed)
    pts = window_points(sys, i)
    wanted = set(pts)
    per_seed = []
    for v in seeds:
        counts: dict[int, int] = {}
        for _ in range(draws):
            for x in _descend(sys, i0, (v,), i, rng):
                if x in wanted:
                    counts[x] = counts.get(x, 0) + 1
        per_seed.append(counts)
    target = Fraction(1, sys.m ** (i + 1))
    w = Fraction(1, sys.m)
    # under the claimed value, sum_s w^2 p_s (1 - p_s) / n <= w * target / n
    var = w * target / draws
    ok, worst, detail = True, Fraction(0), ""
    P = sys.prime(i)
    for x in pts:
        est = sum((w * Fraction(c.get(x, 0), draws) for c in per_seed), Fraction(0))
        dev = est - target
        if dev * dev > sigmas * sigmas * var:
            ok = False
            detail = detail or f"level {i} point {P.vertex_names[x]}: estimate {est} vs {target}"
        worst = max(worst, abs(dev))
    return EstimateCheck("normalization_sampled", ok, len(pts), worst, None, detail)
