import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import diamond, padded_line, split
from l1weaver.builders import build_line
from l1weaver.graph_core import InverseSystem, Projection, SubPoint, graph_from_parts, precedes, project
from l1weaver.metrics import (
    MetricError, closed_star_owners, dbar, dbar_matrix, dbar_points, default_interval_grid,
    path_metric, path_metric_comparison, phi_lipschitz_light_check, trimmed_star_bracket,
    window_vertices,
)
from oracles import dbar_floyd, dbar_floyd_fractions


def floyd_window(sys_):
    verts = window_vertices(sys_)
    _, D = dbar_floyd(sys_)
    unit = Fraction(1, sys_.m ** (sys_.top + 1))
    return verts, [[int(D[a, b]) * unit for b in verts] for a in verts]


# path metric -------------------------------------------------------------------

@pytest.mark.parametrize("i", [0, 1, 2])
def test_adjacent_vertices(i):
    G = split(2).graph(i)
    for e in range(G.n_edges):
        x, y = SubPoint.at(G.tails[e]), SubPoint.at(G.heads[e])
        assert path_metric(G, x, y) == Fraction(1, 3 ** i)
        assert path_metric(G, x, x) == 0


def test_path_metric_on_edge_points():
    G = split(1).graph(1)
    e = G.edge_index["0>1.1a"]
    assert path_metric(G, G.point(e, Fraction(1, 3)), G.point(e, Fraction(2, 3))) == Fraction(1, 9)


def test_disconnected_is_infinite():
    G = graph_from_parts(0, 3, [("a", 0), ("b", 1), ("c", 0), ("d", 1)],
                         [("ab", "a", "b"), ("cd", "c", "d")])
    assert path_metric(G, SubPoint.at(0), SubPoint.at(2)) == math.inf


# d-bar -------------------------------------------------------------------------

def test_dbar_zero_on_diagonal():
    sys_ = split(2)
    for v in window_vertices(sys_):
        value, cert = dbar(sys_, SubPoint.at(v), SubPoint.at(v))
        assert value == 0 and cert.verify(sys_)


@pytest.mark.parametrize("sys_", [split(1), split(2), diamond(1), diamond(2), padded_line(2)],
                         ids=["split1", "split2", "diam1", "diam2", "line"])
def test_dbar_matches_floyd(sys_):
    verts, ref = floyd_window(sys_)
    assert dbar_matrix(sys_, verts) == ref


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_dbar_points_matches_floyd_on_sub_points(sys_):
    rng = random.Random(3)
    G = sys_.graph(sys_.top)
    lo, hi = sys_.window
    pts = []
    while len(pts) < 25:
        e = rng.randrange(G.n_edges)
        p = G.point(e, Fraction(rng.randrange(sys_.m + 1), sys_.m))
        if lo <= G.height_of(p) <= hi and p not in pts:
            pts.append(p)
    assert dbar_points(sys_, pts) == dbar_floyd_fractions(sys_, pts)


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_certificates_verify(sys_):
    verts = window_vertices(sys_)
    rng = random.Random(11)
    for _ in range(40):
        a, b = rng.sample(verts, 2)
        value, cert = dbar(sys_, SubPoint.at(a), SubPoint.at(b))
        assert cert.total == value
        assert cert.verify(sys_)


def test_same_height_copies_split2():
    sys_ = split(2)
    G = sys_.graph(2)
    verts, ref = floyd_window(sys_)
    pos = {v: k for k, v in enumerate(verts)}
    a, b = G.vertex_index["0aa"], G.vertex_index["0ba"]
    value, _ = dbar(sys_, SubPoint.at(a), SubPoint.at(b))
    assert value == ref[pos[a]][pos[b]]


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_dbar_metric_axioms(sys_):
    verts = window_vertices(sys_)
    D = dbar_matrix(sys_, verts)
    n = len(verts)
    for a in range(n):
        assert D[a][a] == 0
        for b in range(n):
            assert D[a][b] == D[b][a]
            assert (D[a][b] == 0) == (a == b)
            for c in range(n):
                assert D[a][c] <= D[a][b] + D[b][c]


@pytest.mark.parametrize("sys_", [split(2), diamond(2), padded_line(2)],
                         ids=["split", "diamond", "line"])
def test_monotone_pairs_and_path_bound(sys_):
    G = sys_.graph(sys_.top)
    verts = window_vertices(sys_)
    D = dbar_matrix(sys_, verts)
    for a, x in enumerate(verts):
        for b, y in enumerate(verts):
            px, py = SubPoint.at(x), SubPoint.at(y)
            assert D[a][b] <= path_metric(G, px, py)
            if precedes(G, px, py):
                assert D[a][b] == G.heights[y] - G.heights[x]


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_shared_star_bounds(sys_):
    verts = window_vertices(sys_)
    D = dbar_matrix(sys_, verts)
    N = sys_.top
    for a, x in enumerate(verts):
        for b, y in enumerate(verts):
            for i in range(N + 1):
                G = sys_.graph(i)
                sx = set(closed_star_owners(G, project(sys_, N, i, SubPoint.at(x))))
                sy = set(closed_star_owners(G, project(sys_, N, i, SubPoint.at(y))))
                if sx & sy:
                    assert D[a][b] <= Fraction(2, sys_.m ** i)
                if D[a][b] <= Fraction(1, sys_.m ** i):
                    assert sx & sy


# brackets --------------------------------------------------------------------

def test_bracket_rejects_equal_points():
    with pytest.raises(MetricError):
        trimmed_star_bracket(split(1), SubPoint.at(0), SubPoint.at(0))


def test_diamond_parallel_branches_bracket():
    sys_ = diamond(2)
    G = sys_.graph(2)
    # level-2 vertices over a2 and b2
    a = [v for v in range(G.n_vertices) if project(sys_, 2, 1, SubPoint.at(v)) ==
         SubPoint.at(sys_.graph(1).vertex_index["0>1:a2"])]
    b = [v for v in range(G.n_vertices) if project(sys_, 2, 1, SubPoint.at(v)) ==
         SubPoint.at(sys_.graph(1).vertex_index["0>1:b2"])]
    assert a and b
    x, y = SubPoint.at(a[0]), SubPoint.at(b[0])
    br = trimmed_star_bracket(sys_, x, y)
    value, _ = dbar(sys_, x, y)
    assert br.level == 1
    assert br.lower < value <= br.upper


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_bracket_contains_dbar(sys_):
    verts = window_vertices(sys_)
    D = dbar_matrix(sys_, verts)
    for a, x in enumerate(verts):
        for b in range(a + 1, len(verts)):
            br = trimmed_star_bracket(sys_, SubPoint.at(x), SubPoint.at(verts[b]))
            assert br.lower < D[a][b] <= br.upper


# Lipschitz-light certificate -------------------------------------------------

def test_line_light_ratio():
    sys_ = padded_line(2)
    assert phi_lipschitz_light_check(sys_).worst_ratio <= 1


def test_whole_window_single_component():
    sys_ = split(2)
    verts = window_vertices(sys_)
    D = dbar_matrix(sys_, verts)
    rep = phi_lipschitz_light_check(sys_, grid=[(0, 1)], dist=D)
    assert rep.worst_ratio == max(max(r) for r in D)


def test_interval_grid_scales():
    grid = default_interval_grid(split(2))
    widths = {b - a for a, b in grid}
    assert widths == {Fraction(1), Fraction(1, 3), Fraction(1, 9)}
    assert all(0 <= a and b <= 1 for a, b in grid)


def test_light_rejects_empty_interval():
    with pytest.raises(MetricError):
        phi_lipschitz_light_check(split(1), grid=[(Fraction(1, 2), Fraction(1, 2))])


# path-metric comparison ------------------------------------------------------

def test_comparison_line():
    rep = path_metric_comparison(padded_line(2))
    assert rep.theta == 0 and rep.ok
    assert rep.worst_upper_ratio == 1


@pytest.mark.parametrize("sys_", [split(2), diamond(2)], ids=["split", "diamond"])
def test_comparison_band(sys_):
    rep = path_metric_comparison(sys_)
    assert rep.ok
    assert rep.constant == Fraction(2 * sys_.m + rep.theta, 2 * (sys_.m - 1))
    assert rep.worst_upper_ratio <= rep.constant


def test_comparison_reports_disconnected_fibre():
    # two disjoint chains over one base edge: every fibre splits in two
    G0 = graph_from_parts(0, 2, [("a", 0), ("b", 1)], [("ab", "a", "b")])
    G1 = graph_from_parts(1, 2, [("a1", 0), ("p1", Fraction(1, 2)), ("b1", 1),
                                 ("a2", 0), ("p2", Fraction(1, 2)), ("b2", 1)],
                          [("e1", "a1", "p1"), ("f1", "p1", "b1"),
                           ("e2", "a2", "p2"), ("f2", "p2", "b2")])
    mid = G0.point(0, Fraction(1, 2))
    P = Projection((SubPoint.at(0), mid, SubPoint.at(1)) * 2, ((0, 0), (0, 1)) * 2)
    sys_ = InverseSystem(2, (G0, G1), (P,), (Fraction(0), Fraction(1)))
    rep = path_metric_comparison(sys_)
    assert not rep.ok
    assert any("not connected" in v for v in rep.violations)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2), st.sampled_from([(0, 1), (0, 2), (-1, 1)]))
def test_line_dbar_is_height_difference(N, span):
    sys_ = build_line(N, span=span)
    G = sys_.graph(N)
    verts = list(range(G.n_vertices))
    D = dbar_matrix(sys_, verts)
    for a in verts:
        for b in verts:
            assert D[a][b] == abs(G.heights[a] - G.heights[b])
