import csv
import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

from conftest import split
from l1weaver.builders import gadget_to_doc, default_gadget, load_system
from l1weaver.cli import main
from l1weaver.cut_metrics import cut_matrix
from l1weaver.metrics import dbar_matrix, window_vertices
from l1weaver.slices import sigma_prime

FIX = Path(__file__).parent / "fixtures"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# build -------------------------------------------------------------------------

def test_build_round_trip(tmp_path, capsys):
    out = tmp_path / "split.json"
    code, _, _ = run(["build", "--system", "laakso-split", "--depth", 2, "--out", out], capsys)
    assert code == 0
    sys_ = load_system(json.loads(out.read_text()))
    ref = split(2)
    assert sys_.levels == ref.levels and sys_.projections == ref.projections
    again = tmp_path / "again.json"
    run(["build", "--spec", out, "--out", again], capsys)
    assert again.read_bytes() == out.read_bytes()


def test_build_dot(tmp_path, capsys):
    dot = tmp_path / "d.dot"
    code, _, _ = run(["build", "--system", "laakso-diamond", "--depth", 1, "--out",
                      tmp_path / "d.json", "--dot", dot, "--level", 1], capsys)
    assert code == 0
    gadget_edges = [l for l in dot.read_text().splitlines() if "->" in l and "key=\"0>1:" in l]
    assert len(gadget_edges) == 6


def test_bad_gadget_exits_nonzero(tmp_path, capsys):
    doc = gadget_to_doc(default_gadget())
    del doc["vertices"]
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"depth": 1, "gadget": doc}))
    code, _, err = run(["build", "--spec", spec], capsys)
    assert code == 2
    assert "gadget.vertices" in err


def test_missing_spec_file(tmp_path, capsys):
    code, _, err = run(["build", "--spec", tmp_path / "nope.json"], capsys)
    assert code == 2 and "does not exist" in err


# verify ------------------------------------------------------------------------

def test_verify_split2(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = run(["verify", "--system", "laakso-split", "--depth", 2, "--out", out], capsys)
    doc = json.loads(out.read_text())
    assert code == 0 and doc["ok"] and doc["mode"] == "exhaustive"
    assert doc["estimates"]["A_emp"] is not None
    assert doc["light"]["ok"] and doc["comparison"]["ok"]


def test_verify_corrupt_hook(capsys):
    code, out, _ = run(["verify", "--depth", 2, "--estimates", "normalization",
                        "--corrupt-level", 1], capsys)
    doc = json.loads(out)
    assert code == 1
    check = doc["estimates"]["checks"][0]
    assert check["name"] == "normalization" and not check["passed"]


def test_verify_unknown_estimate(capsys):
    code, _, err = run(["verify", "--depth", 1, "--estimates", "bogus"], capsys)
    assert code == 2 and "bogus" in err


def test_verify_infeasible_asks_for_sampler(capsys):
    code, _, err = run(["verify", "--depth", 4], capsys)
    assert code == 2 and "--sampler-draws" in err


def test_verify_sampled_mode_deterministic(capsys):
    argv = ["verify", "--depth", 4, "--sampler-draws", 300, "--seed", 2]
    code, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second
    doc = json.loads(first)
    assert doc["mode"] == "sampled" and code == (0 if doc["ok"] else 1)


# embed -------------------------------------------------------------------------

def _l1_from_csv(path):
    coords: dict = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            coords.setdefault(row["point"], {})[row["slice"]] = Fraction(row["value"])
    return coords


def test_embed_split2_matches_cut_metric(tmp_path, capsys, baselines):
    out = tmp_path / "emb.csv"
    code, _, _ = run(["embed", "--system", "laakso-split", "--depth", 2, "--out", out], capsys)
    assert code == 0
    report = json.loads((tmp_path / "emb.report.json").read_text())
    assert Fraction(report["min_ratio"]) == baselines["min_ratio_split2"]
    assert report["geodesic"]["ok"]
    coords = _l1_from_csv(out)
    sys_ = split(2)
    G = sys_.graph(2)
    verts = window_vertices(sys_)
    cm = cut_matrix(sys_, sigma_prime(sys_, 2), verts).fractions()
    names = [G.vertex_names[v] for v in verts]
    for a, x in enumerate(names):
        for b in range(a + 1, len(names)):
            y = names[b]
            cx, cy = coords.get(x, {}), coords.get(y, {})
            l1 = sum((abs(cx.get(k, 0) - cy.get(k, 0)) for k in cx.keys() | cy.keys()),
                     Fraction(0))
            assert l1 == cm[a][b]


def test_embed_line_ratios(capsys, tmp_path):
    code, _, _ = run(["embed", "--system", "line", "--depth", 2, "--window", "0,1",
                      "--out", tmp_path / "l.csv"], capsys)
    rep = json.loads((tmp_path / "l.report.json").read_text())
    assert code == 0
    assert rep["min_ratio"] == rep["max_ratio"] == "1"


def test_embed_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        run(["embed", "--system", "laakso-diamond", "--depth", 1, "--out",
             tmp_path / f"{name}.csv"], capsys)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.report.json").read_bytes() == (tmp_path / "b.report.json").read_bytes()


# factorize ---------------------------------------------------------------------

def test_factorize_grid(tmp_path, capsys):
    out = tmp_path / "f"
    code, stdout, _ = run(["factorize", "--points", FIX / "grid_points.csv",
                           "--distances", FIX / "grid_distances.csv", "--u", FIX / "grid_u.csv",
                           "--depth", 2, "--out", out], capsys)
    assert code == 0
    assert json.loads(stdout)["distortion"] == "1"
    report = json.loads((out / "report.json").read_text())
    assert report["compatible"] and report["heights_match"]
    sys_ = load_system(json.loads((out / "system.json").read_text()))
    assert sys_.top == 2
    rows = list(csv.DictReader(open(out / "maps.csv")))
    assert len(rows) == 30
    assert all(Fraction(r["height"]) == Fraction(int(r["point"][1:]), 9) for r in rows)


def _write_space(tmp_path, names, dist, u):
    (tmp_path / "p.csv").write_text("point\n" + "".join(n + "\n" for n in names))
    rows = ["id," + ",".join(names)]
    rows += [n + "," + ",".join(str(x) for x in r) for n, r in zip(names, dist)]
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "u.csv").write_text("".join(f"{n},{x}\n" for n, x in zip(names, u)))
    return ["--points", tmp_path / "p.csv", "--distances", tmp_path / "d.csv",
            "--u", tmp_path / "u.csv"]


def test_factorize_split_fixture(tmp_path, capsys):
    sys_ = split(2)
    G = sys_.graph(2)
    verts = window_vertices(sys_)
    files = _write_space(tmp_path, [G.vertex_names[v] for v in verts],
                         dbar_matrix(sys_, verts), [G.heights[v] for v in verts])
    code, _, _ = run(["factorize", *files, "--depth", 3, "--out", tmp_path / "f"], capsys)
    report = json.loads((tmp_path / "f" / "report.json").read_text())
    assert report["compatible"] and report["heights_match"] and report["admissible"]
    assert code == 0


def test_factorize_rejects_non_lipschitz(tmp_path, capsys):
    files = _write_space(tmp_path, ["g0", "g1"], [[0, Fraction(1, 9)], [Fraction(1, 9), 0]],
                         [0, 1])
    code, _, err = run(["factorize", *files], capsys)
    assert code == 2
    assert "g0" in err and "g1" in err


def test_factorize_hypothesis_failure(tmp_path, capsys):
    code, _, err = run(["factorize", "--points", FIX / "grid_points.csv",
                        "--distances", FIX / "grid_distances.csv", "--u", FIX / "grid_u.csv",
                        "--constant", "1/10", "--out", tmp_path / "f"], capsys)
    assert code == 2 and "hypothesis fails on [" in err


# metrics -----------------------------------------------------------------------

def test_metrics_csv(tmp_path, capsys):
    out = tmp_path / "m.csv"
    code, _, _ = run(["metrics", "--system", "laakso-split", "--depth", 2, "--level", 1,
                      "--out", out], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    n = len(window_vertices(split(1)))
    assert len(rows) == n * (n - 1) // 2
    for r in rows:
        assert Fraction(r["bracket_lower"]) < Fraction(r["dbar"]) <= Fraction(r["bracket_upper"])
        assert Fraction(r["dbar"]) <= Fraction(r["path"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "l1weaver", "verify", "--depth", "1",
                           "--estimates", "normalization"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"]
