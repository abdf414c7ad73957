"""Command-line entry point: build, verify, embed, factorize, metrics.

Exit codes: 0 success, 1 a check failed, 2 bad input (including requests too
large for exhaustive verification without ``--sampler-draws``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads():
    # must run before numpy is imported: BLAS reads these once
    cap = os.environ.get("L1WEAVER_THREADS")
    if cap and cap.isdigit() and int(cap) > 0:
        for var in THREAD_VARS:
            os.environ[var] = cap


_cap_threads()

from . import documents as docs  # noqa: E402
from .builders import SpecError, build_diamond, build_line, build_split, load_system  # noqa: E402
from .cut_metrics import (ESTIMATES, WindowError, corrupt_measure, sampled_normalization,  # noqa: E402
                          verify_estimates)
from .embedding import distortion_report, embed_level, geodesic_isometry_check  # noqa: E402
from .factorization import (FiniteMetricSpace, HypothesisError, MetricInputError,  # noqa: E402
                            factorize, verify_factorization)
from .graph_core import GraphError, InverseSystem, SubPoint  # noqa: E402
from .metrics import (MetricError, dbar_matrix, hop_distances, path_metric_comparison,  # noqa: E402
                      phi_lipschitz_light_check, trimmed_star_bracket, window_vertices)
from .slices import FactorizedMeasure, SliceError, sigma_prime, sigma_top  # noqa: E402

INF = float("inf")

BUILTINS = ("line", "laakso-split", "laakso-diamond")
EXTRA_CHECKS = ("light", "comparison")
MAX_MATERIALIZED = 200_000


class InputError(Exception):
    pass


# system selection -------------------------------------------------------------------

def _window(text: str | None):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise InputError("--window expects two rationals 'a,b'")
    lo, hi = (docs.rational(p.strip(), "--window") for p in parts)
    if not lo < hi:
        raise InputError("--window needs a < b")
    return lo, hi


def load_config_system(args) -> InverseSystem:
    window = _window(args.window)
    if args.spec:
        path = Path(args.spec)
        if not path.is_file():
            raise InputError(f"spec file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        system = load_system(doc)
    else:
        name = args.system or "laakso-split"
        if name not in BUILTINS:
            raise InputError(f"unknown system {name!r}; choose from {', '.join(BUILTINS)}")
        depth = 2 if args.depth is None else args.depth
        if depth < 0:
            raise InputError("--depth must be nonnegative")
        collar = docs.rational(args.collar, "--collar") if args.collar is not None else None
        if name == "line":
            if window is None:
                return build_line(depth)
            pad = Fraction(1) if collar is None else collar
            return build_line(depth, (window[0] - pad, window[1] + pad), window=window)
        build = build_split if name == "laakso-split" else build_diamond
        system = build(depth) if collar is None else build(depth, collar)
    if window is not None:
        system = dataclasses.replace(system, window=window, _cache={})
    return system


def exhaustive_feasible(system: InverseSystem) -> bool:
    """Exhaustive checks need level N-1 materialized; level N may stay factorized."""
    if system.top - system.base_level < 2:
        return True
    parent = sigma_prime(system, system.top - 2)
    return FactorizedMeasure(system, parent).raw_size() <= MAX_MATERIALIZED


# output -----------------------------------------------------------------------------

def _emit(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _report_path(out: str | None, suffix: str) -> str | None:
    if out is None or out == "-":
        return None
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


# verbs ------------------------------------------------------------------------------

def cmd_build(args) -> int:
    system = load_config_system(args)
    _emit(docs.dumps(docs.system_to_doc(system)), args.out)
    if args.dot:
        _emit(docs.to_dot(system, args.level), args.dot)
    return 0


def _estimate_names(text: str) -> tuple[list[str], list[str]]:
    if text == "all":
        return list(ESTIMATES), list(EXTRA_CHECKS)
    names = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [n for n in names if n not in ESTIMATES and n not in EXTRA_CHECKS]
    if unknown:
        raise InputError(f"unknown estimate {unknown[0]!r}; choose from "
                         f"{', '.join(ESTIMATES + EXTRA_CHECKS)}")
    return [n for n in names if n in ESTIMATES], [n for n in names if n in EXTRA_CHECKS]


def cmd_verify(args) -> int:
    system = load_config_system(args)
    estimates, extras = _estimate_names(args.estimates)
    up_to = system.top if args.level is None else args.level
    out: dict = {"system": system.label, "depth": system.top}
    ok = True
    if not exhaustive_feasible(system):
        if not args.sampler_draws:
            raise InputError(f"depth {system.top} is too large for exhaustive verification; "
                             f"rerun with --sampler-draws N (and --seed) for sampled checks")
        check = sampled_normalization(system, up_to, args.sampler_draws, args.seed)
        out["mode"] = "sampled"
        out["draws"] = args.sampler_draws
        out["seed"] = args.seed
        out["checks"] = [check.as_dict()]
        out["ok"] = check.passed
        _emit(docs.dumps(out), args.out)
        return 0 if check.passed else 1
    out["mode"] = "exhaustive"
    measures = None
    if args.corrupt_level is not None:
        measures = {args.corrupt_level: corrupt_measure(sigma_prime(system, args.corrupt_level))}
    if estimates:
        report = verify_estimates(system, up_to, estimates, measures)
        out["estimates"] = report.as_dict()
        ok &= report.ok
    if extras:
        verts = window_vertices(system)
        dist = dbar_matrix(system, verts)
        if "light" in extras:
            light = phi_lipschitz_light_check(system, dist=dist, vertices=verts)
            out["light"] = {"ok": light.ok, "worst_ratio": str(light.worst_ratio),
                            "bound": str(light.bound), "intervals": light.intervals,
                            "worst_interval": None if light.worst_interval is None
                            else [str(x) for x in light.worst_interval]}
            ok &= light.ok
        if "comparison" in extras:
            comp = path_metric_comparison(system, vertices=verts, dist=dist)
            out["comparison"] = {"ok": comp.ok, "theta": comp.theta,
                                 "constant": str(comp.constant), "pairs": comp.pairs,
                                 "lower_ok": comp.lower_ok, "upper_ok": comp.upper_ok,
                                 "worst_upper_ratio": str(comp.worst_upper_ratio),
                                 "violations": comp.violations}
            ok &= comp.ok
    out["ok"] = ok
    _emit(docs.dumps(out), args.out)
    return 0 if ok else 1


def cmd_embed(args) -> int:
    system = load_config_system(args)
    i = system.top if args.level is None else args.level
    G = system.graph(i)
    verts = window_vertices(system, i)
    mu = sigma_top(system, i)
    vectors = embed_level(system, i, mu, verts)
    keys = sorted({k for v in vectors for k in v.coordinates})
    slice_id = {k: f"s{n}" for n, k in enumerate(keys)}
    rows = []
    for v in vectors:
        for k, val in sorted(v.coordinates.items(), key=lambda kv: slice_id[kv[0]]):
            rows.append([G.vertex_names[v.owner], slice_id[k], val])
    rows.sort(key=lambda r: (r[0], int(r[1][1:])))
    _emit(docs.write_csv(rows, ["point", "slice", "value"]), args.out)
    report = distortion_report(system, i, measure=mu if i == system.top else None)
    geo = geodesic_isometry_check(system, i, vectors)
    doc = report.as_dict()
    doc["geodesic"] = {"ok": geo.ok, "pairs": geo.pairs,
                       "violations": [list(v) for v in geo.violations]}
    doc["dimensions"] = len(keys)
    doc["ok"] = report.ok and geo.ok
    _emit(docs.dumps(doc), args.report or _report_path(args.out, ".report.json"))
    return 0 if doc["ok"] else 1


def _read(path: str | None, what: str) -> str:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file {p} does not exist")
    return p.read_text()


def cmd_factorize(args) -> int:
    ids = docs.read_points(_read(args.points, "points"))
    dist = docs.read_matrix(_read(args.distances, "distances"), ids)
    u = docs.read_values(_read(args.u, "u"), ids, "u")
    X = FiniteMetricSpace.build(ids, dist, u)
    i_min = args.base_level
    i_max = 2 if args.depth is None else args.depth
    C = None if args.constant is None else docs.rational(args.constant, "--constant")
    collar = None if args.collar is None else docs.rational(args.collar, "--collar")
    F = factorize(X, args.m, i_min, i_max, C, collar)
    report = verify_factorization(F, X)
    out = Path(args.out or "factorization")
    out.mkdir(parents=True, exist_ok=True)
    (out / "system.json").write_text(docs.dumps(docs.system_to_doc(F.system)))
    rows = []
    for i in sorted(F.maps):
        G = F.system.graph(i)
        for z, p in enumerate(F.maps[i]):
            rows.append([X.points[z], i, G.point_name(p), G.height_of(p)])
    (out / "maps.csv").write_text(docs.write_csv(rows, ["point", "level", "image", "height"]))
    doc = report.as_dict()
    doc["family"] = F.family
    if F.lightness is not None:
        doc["lightness"] = {"worst_ratio": str(F.lightness.worst_ratio),
                            "per_scale": {str(k): str(v) for k, v in F.lightness.per_scale.items()}}
    (out / "report.json").write_text(docs.dumps(doc))
    sys.stdout.write(docs.dumps({"ok": report.ok, "distortion": doc["distortion"],
                                 "out": str(out)}))
    return 0 if report.ok else 1


def truncate(system: InverseSystem, i: int) -> InverseSystem:
    """The system cut off after level ``i``."""
    k = i - system.base_level
    if not 0 <= k <= system.top - system.base_level:
        raise InputError(f"level {i} outside {system.base_level}..{system.top}")
    if i == system.top:
        return system
    return InverseSystem(system.m, system.levels[:k + 1], system.projections[:k],
                         system.window, system.label)


def cmd_metrics(args) -> int:
    """Pairwise d-bar of the truncation at ``--level``, with the trimmed-star
    bracket and the path metric of that level, over its window vertices."""
    system = load_config_system(args)
    if args.level is not None:
        system = truncate(system, args.level)
    G = system.graph(system.top)
    verts = window_vertices(system)
    dist = dbar_matrix(system, verts)
    L = G.edge_length
    rows = []
    for a, x in enumerate(verts):
        hops = hop_distances(G, x)
        for b in range(a + 1, len(verts)):
            y = verts[b]
            br = trimmed_star_bracket(system, SubPoint.at(x), SubPoint.at(y))
            path = "inf" if hops[y] == INF else hops[y] * L
            rows.append([G.vertex_names[x], G.vertex_names[y], dist[a][b], br.level,
                         br.lower, br.upper, path])
    _emit(docs.write_csv(rows, ["a", "b", "dbar", "bracket_level", "bracket_lower",
                                "bracket_upper", "path"]), args.out)
    return 0


# argument parsing ---------------------------------------------------------------------

def _system_flags(p: argparse.ArgumentParser):
    p.add_argument("--system", choices=BUILTINS, help="builtin system (default laakso-split)")
    p.add_argument("--spec", help="JSON spec or system document (overrides --system)")
    p.add_argument("--depth", type=int, help="number of refinement levels N (default 2)")
    p.add_argument("--collar", help="collar height as an exact rational")
    p.add_argument("--window", help="window 'a,b' (exact rationals)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l1weaver", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="write a system document (and optionally DOT)")
    _system_flags(p)
    p.add_argument("--out", help="system document path (default stdout)")
    p.add_argument("--dot", help="also write DOT for one level to this path")
    p.add_argument("--level", type=int, help="level for the DOT export (default top)")
    p.set_defaults(run=cmd_build)

    p = sub.add_parser("verify", help="run the estimate checks, report JSON")
    _system_flags(p)
    p.add_argument("--level", type=int, help="check levels up to this one (default top)")
    p.add_argument("--estimates", default="all",
                   help="'all' or a comma list of: " + ", ".join(ESTIMATES + EXTRA_CHECKS))
    p.add_argument("--sampler-draws", type=int, default=0,
                   help="draws per seed for sampled checks on systems too deep to enumerate")
    p.add_argument("--seed", type=int, default=0, help="RNG seed for the sampler")
    p.add_argument("--corrupt-level", type=int,
                   help="testing hook: feed a corrupted measure at this level")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(run=cmd_verify)

    p = sub.add_parser("embed", help="write the l1 embedding CSV and a distortion report")
    _system_flags(p)
    p.add_argument("--level", type=int, help="embedding level (default top)")
    p.add_argument("--out", help="embedding CSV path (default stdout)")
    p.add_argument("--report", help="report path (default next to --out, else stdout)")
    p.set_defaults(run=cmd_embed)

    p = sub.add_parser("factorize", help="factor a height function through a graph system")
    p.add_argument("--points", help="CSV of point ids")
    p.add_argument("--distances", help="CSV distance matrix of exact rationals")
    p.add_argument("--u", help="CSV of u values (id,value rows or one column)")
    p.add_argument("--m", type=int, default=3, help="subdivision base (default 3)")
    p.add_argument("--base-level", type=int, default=0, help="coarsest level (default 0)")
    p.add_argument("--depth", type=int, help="finest level (default 2)")
    p.add_argument("--constant", help="lightness constant C to check first")
    p.add_argument("--collar", help="collar height (default one base edge)")
    p.add_argument("--out", help="output directory (default ./factorization)")
    p.set_defaults(run=cmd_factorize)

    p = sub.add_parser("metrics", help="pairwise d-bar, brackets and path metric as CSV")
    _system_flags(p)
    p.add_argument("--level", type=int, help="truncate the system at this level")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(run=cmd_metrics)
    return parser


INPUT_ERRORS = (InputError, SpecError, GraphError, SliceError, MetricError, MetricInputError,
                HypothesisError, WindowError, ValueError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except MetricInputError as exc:
        print(f"l1weaver: invalid metric input: {exc}", file=sys.stderr)
    except HypothesisError as exc:
        a, b = exc.interval
        print(f"l1weaver: hypothesis fails on [{a}, {b}]: {exc}", file=sys.stderr)
    except INPUT_ERRORS as exc:
        print(f"l1weaver: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
