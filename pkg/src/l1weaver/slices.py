"""Slices of subdivided level graphs, child measures and exact diffusion.

A slice at level ``i`` is stored as a sorted tuple of vertex ids of the
subdivision X_i' (ids as produced by ``subdivide``).  Slice measures carry
exact rational masses.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from math import lcm, prod
from typing import Iterable, Sequence

from .graph_core import InverseSystem, LevelGraph

Slice = tuple[int, ...]


class SliceError(ValueError):
    pass


class InvalidSlice(SliceError):
    pass


@dataclass
class SliceMeasure:
    level: int
    support: dict[Slice, Fraction] = field(default_factory=dict)

    def total(self) -> Fraction:
        return sum(self.support.values(), Fraction(0))

    def items(self) -> list[tuple[Slice, Fraction]]:
        """Support in canonical (lexicographic) slice order."""
        return sorted(self.support.items())

    def __len__(self):
        return len(self.support)

    def containing_mass(self) -> dict[int, Fraction]:
        acc: dict[int, Fraction] = {}
        for S, mu in self.support.items():
            for w in S:
                acc[w] = acc.get(w, 0) + mu
        return acc


# children ------------------------------------------------------------------

def _interior(G: LevelGraph, e: int, k: int) -> int:
    # id in X' of the point at k/m along edge e
    return G.n_vertices + e * (G.m - 1) + k - 1


class _Children:
    """Children of one vertex as integer weights over a common denominator."""

    __slots__ = ("slices", "weights", "denominator")

    def __init__(self, slices, weights, denominator):
        self.slices = slices
        self.weights = weights
        self.denominator = denominator

    def as_fractions(self) -> list[tuple[Slice, Fraction]]:
        return [(s, Fraction(w, self.denominator)) for s, w in zip(self.slices, self.weights)]


def _vertex_children(sys: InverseSystem, i: int, v: int) -> _Children:
    key = ("children", i, v)
    cached = sys._cache.get(key)
    if cached is not None:
        return cached
    G = sys.graph(i)
    m = G.m
    ins, outs = G.in_edges[v], G.out_edges[v]
    if not ins or not outs:
        raise SliceError(f"vertex {G.vertex_names[v]} at level {i} lacks "
                         f"{'incoming' if not ins else 'outgoing'} edges")
    # type 1 gets 1/m; each of types 2 and 3 shares (m-1)/(2m)
    D = 2 * m * (m - 1) ** max(len(ins), len(outs))
    slices: list[Slice] = [(v,)]
    weights = [D // m]
    for edges in (outs, ins):
        count = (m - 1) ** len(edges)
        w = D * (m - 1) // (2 * m * count)
        for ks in product(range(1, m), repeat=len(edges)):
            slices.append(tuple(sorted(_interior(G, e, k) for e, k in zip(edges, ks))))
            weights.append(w)
    out = _Children(tuple(slices), tuple(weights), D)
    sys._cache[key] = out
    return out


def children_of_vertex(sys: InverseSystem, i: int, v: int) -> list[tuple[Slice, Fraction]]:
    """Children of vertex ``v`` of X_i, as partial slices of X_i' with masses."""
    return _vertex_children(sys, i, v).as_fractions()


def preimage_vertices(sys: InverseSystem, i: int, S: Slice) -> list[int]:
    pre = sys.preimages(i)
    return sorted(w for x in S for w in pre[x])


def children_of_slice(sys: InverseSystem, i: int, S: Slice) -> SliceMeasure:
    """Product measure on unions of one child per preimage vertex (level i+1)."""
    return diffuse(sys, i, SliceMeasure(i, {tuple(S): Fraction(1)}))


def diffuse(sys: InverseSystem, i: int, mu: SliceMeasure) -> SliceMeasure:
    """Push a level-i slice measure to level i+1."""
    if mu.level != i:
        raise SliceError(f"measure lives at level {mu.level}, not {i}")
    # integer bookkeeping: every mass is an integer over one common denominator
    plans = []
    for S, mass in mu.items():
        kids = [_vertex_children(sys, i + 1, w) for w in preimage_vertices(sys, i, S)]
        plans.append((S, mass, kids))
    denom = 1
    for _, mass, kids in plans:
        denom = lcm(denom, mass.denominator * prod(k.denominator for k in kids))
    acc: dict[Slice, int] = {}
    get = acc.get
    for _, mass, kids in plans:
        scale = mass.numerator * (denom // (mass.denominator * prod(k.denominator for k in kids)))
        if not kids:
            raise SliceError("slice has no preimage vertices")
        for combo in product(*[tuple(zip(k.slices, k.weights)) for k in kids]):
            w = scale
            elems: list[int] = []
            for s, x in combo:
                w *= x
                elems.extend(s)
            key = tuple(sorted(elems))
            acc[key] = get(key, 0) + w
    return SliceMeasure(i + 1, {S: Fraction(w, denom) for S, w in acc.items()})


# seeding ---------------------------------------------------------------------

def default_seeds(sys: InverseSystem) -> list[int]:
    """Vertices of X_0' (base level) whose open star meets the window."""
    i0 = sys.base_level
    P = sys.prime(i0)
    lo, hi = sys.window
    step = P.edge_length
    return [v for v in range(P.n_vertices) if lo - step < P.heights[v] < hi + step]


def seed_measure(sys: InverseSystem, seeds: Iterable[int] | None = None) -> SliceMeasure:
    i0 = sys.base_level
    seeds = default_seeds(sys) if seeds is None else sorted(set(seeds))
    return SliceMeasure(i0, {(v,): Fraction(1, sys.m) for v in seeds})


def sigma_prime(sys: InverseSystem, i: int, seeds: Iterable[int] | None = None) -> SliceMeasure:
    """The level-i slice measure obtained by diffusing the seed measure."""
    if not sys.base_level <= i <= sys.top:
        raise SliceError(f"level {i} outside {sys.base_level}..{sys.top}")
    key = ("sigma", i, None if seeds is None else tuple(sorted(set(seeds))))
    if key in sys._cache:
        return sys._cache[key]
    if i == sys.base_level:
        mu = seed_measure(sys, seeds)
    else:
        mu = diffuse(sys, i - 1, sigma_prime(sys, i - 1, seeds))
    sys._cache[key] = mu
    return mu


# factorized one-step measures ------------------------------------------------

def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class VertexKernel:
    """Order data of the child measure of one vertex, relative to X'.

    ``sure_leq`` marks points lying below some element of every child;
    ``gt_weight[x]`` is the weight (over ``denominator``) of children with no
    element above ``x``, for the remaining points below some element of some
    child.  Points outside both sets lie below no child element at all.
    """

    __slots__ = ("vertex", "children", "weights", "denominator", "sure_leq",
                 "reach", "gt_weight", "member_weight", "child_anc")

    def __init__(self, sys: InverseSystem, j: int, v: int):
        ch = _vertex_children(sys, j, v)
        anc = sys.prime(j).ancestors
        self.vertex = v
        self.children = ch.slices
        self.weights = ch.weights
        self.denominator = ch.denominator
        child_anc = []
        for W in ch.slices:
            acc = 0
            for w in W:
                acc |= anc[w]
            child_anc.append(acc)
        self.child_anc = tuple(child_anc)
        sure, reach = -1, 0
        for a in child_anc:
            sure &= a
            reach |= a
        self.sure_leq = sure
        self.reach = reach
        self.gt_weight = {x: sum(wt for a, wt in zip(child_anc, ch.weights) if not a >> x & 1)
                          for x in iter_bits(reach & ~sure)}
        members: dict[int, int] = {}
        for W, wt in zip(ch.slices, ch.weights):
            for w in W:
                members[w] = members.get(w, 0) + wt
        self.member_weight = members

    def both_gt_weight(self, x: int, y: int) -> int:
        return sum(wt for a, wt in zip(self.child_anc, self.weights)
                   if not (a >> x & 1) and not (a >> y & 1))


def vertex_kernel(sys: InverseSystem, j: int, v: int) -> VertexKernel:
    key = ("kernel", j, v)
    if key not in sys._cache:
        sys._cache[key] = VertexKernel(sys, j, v)
    return sys._cache[key]


@dataclass
class FactorizedMeasure:
    """The image of ``parent`` under one diffusion step, kept in product form.

    Exact, but never enumerates the (possibly enormous) support.
    """

    sys: InverseSystem
    parent: SliceMeasure

    @property
    def level(self) -> int:
        return self.parent.level + 1

    def total(self) -> Fraction:
        return self.parent.total()

    def parts(self):
        """Yield (parent slice, mass, kernels of its preimage vertices)."""
        i = self.parent.level
        for S, mass in self.parent.items():
            yield S, mass, [vertex_kernel(self.sys, i + 1, w)
                            for w in preimage_vertices(self.sys, i, S)]

    def raw_size(self) -> int:
        return sum(prod(len(k.children) for k in ks) for _, _, ks in self.parts())

    def containing_mass(self) -> dict[int, Fraction]:
        acc: dict[int, Fraction] = {}
        for _, mass, kernels in self.parts():
            for k in kernels:
                for x, wt in k.member_weight.items():
                    acc[x] = acc.get(x, 0) + mass * Fraction(wt, k.denominator)
        return acc

    def expand(self) -> SliceMeasure:
        return diffuse(self.sys, self.parent.level, self.parent)


def sigma_top(sys: InverseSystem, i: int, max_support: int = 200_000,
              seeds: Iterable[int] | None = None):
    """Level-i slice measure, materialized when small enough, else factorized."""
    if i == sys.base_level:
        return sigma_prime(sys, i, seeds)
    parent = sigma_prime(sys, i - 1, seeds)
    fm = FactorizedMeasure(sys, parent)
    key = ("sigma", i, None if seeds is None else tuple(sorted(set(seeds))))
    if key in sys._cache or fm.raw_size() <= max_support:
        return sigma_prime(sys, i, seeds)
    return fm


# sampling --------------------------------------------------------------------

def _draw_child(rng: random.Random, ch: _Children) -> Slice:
    r = rng.randrange(ch.denominator)
    for s, w in zip(ch.slices, ch.weights):
        if r < w:
            return s
        r -= w
    raise AssertionError("child weights do not sum to the denominator")


def _descend(sys: InverseSystem, i: int, S: Slice, j: int, rng: random.Random) -> Slice:
    cur = tuple(S)
    for k in range(i, j):
        elems: list[int] = []
        for w in preimage_vertices(sys, k, cur):
            elems.extend(_draw_child(rng, _vertex_children(sys, k + 1, w)))
        cur = tuple(sorted(elems))
    return cur


def sample_descendants(sys: InverseSystem, i: int, S: Slice, j: int, seed: int,
                       draws: int = 1) -> list[Slice]:
    """Independent draws of level-j descendants of slice ``S`` (level i)."""
    if j < i:
        raise SliceError("target level must not be below the slice level")
    rng = random.Random(seed)
    return [_descend(sys, i, S, j, rng) for _ in range(draws)]


def sample_descendant(sys: InverseSystem, i: int, S: Slice, j: int, seed: int) -> Slice:
    return sample_descendants(sys, i, S, j, seed, 1)[0]


def containing_counts(sys: InverseSystem, i: int, S: Slice, j: int, seed: int,
                      draws: int) -> dict[int, int]:
    """How many of ``draws`` sampled descendants contain each X_j' vertex."""
    if j < i:
        raise SliceError("target level must not be below the slice level")
    rng = random.Random(seed)
    counts: dict[int, int] = {}
    for _ in range(draws):
        for x in _descend(sys, i, S, j, rng):
            counts[x] = counts.get(x, 0) + 1
    return dict(sorted(counts.items()))


def exact_containing(sys: InverseSystem, i: int, S: Slice, j: int) -> dict[int, Fraction]:
    """Probability that the level-j descendant of ``S`` contains each X_j' vertex."""
    mu = SliceMeasure(i, {tuple(S): Fraction(1)})
    if j == i:
        return {x: Fraction(1) for x in S}
    for k in range(i, j - 1):
        mu = diffuse(sys, k, mu)
    return dict(sorted(FactorizedMeasure(sys, mu).containing_mass().items()))


def within_sigmas(count: int, draws: int, p: Fraction, sigmas: int = 3) -> bool:
    """|count/draws - p| <= sigmas * sqrt(p(1-p)/draws), decided exactly."""
    p = Fraction(p)
    dev = count - draws * p
    return dev * dev <= sigmas * sigmas * draws * p * (1 - p)


# validation ------------------------------------------------------------------

def is_antichain(G: LevelGraph, elems: Sequence[int]) -> bool:
    mask = 0
    for w in elems:
        mask |= 1 << w
    return all((G.descendants[w] & mask) == 1 << w for w in elems)


def is_slice(G: LevelGraph, elems: Sequence[int]) -> bool:
    """Antichain meeting every source-to-sink path (then exactly once)."""
    if not is_antichain(G, elems):
        return False
    blocked = set(elems)
    seen = set()
    stack = [s for s in G.sources() if s not in blocked]
    seen.update(stack)
    while stack:
        v = stack.pop()
        if not G.out_edges[v]:
            return False
        for e in G.out_edges[v]:
            w = G.heads[e]
            if w not in blocked and w not in seen:
                seen.add(w)
                stack.append(w)
    return True
