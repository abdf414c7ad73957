import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import diamond, padded_line, split
from l1weaver.builders import SpecError, load_system
from l1weaver.documents import (
    dumps, rational, read_csv, read_matrix, read_values, system_from_doc, system_to_doc,
    to_dot, write_csv,
)


@pytest.mark.parametrize("sys_", [split(2), diamond(1), padded_line(2)],
                         ids=["split", "diamond", "line"])
def test_system_round_trip(sys_):
    text = dumps(system_to_doc(sys_))
    back = load_system(json.loads(text))
    assert back.levels == sys_.levels
    assert back.projections == sys_.projections
    assert back.window == sys_.window
    assert dumps(system_to_doc(back)) == text


def test_system_doc_errors_name_fields():
    doc = system_to_doc(split(1))
    bad = dict(doc, format="other/9")
    with pytest.raises(SpecError) as err:
        system_from_doc(bad)
    assert err.value.field == "format"
    bad = json.loads(json.dumps(doc))
    bad["levels"][1]["vertices"][0][1] = 0.5
    with pytest.raises(SpecError) as err:
        system_from_doc(bad)
    assert err.value.field.startswith("levels[1]")
    bad = json.loads(json.dumps(doc))
    bad["projections"] = []
    with pytest.raises(SpecError) as err:
        system_from_doc(bad)
    assert err.value.field == "projections"


def test_dot_counts_and_ranks():
    text = to_dot(diamond(1), 1)
    edges = [line for line in text.splitlines() if "->" in line]
    # six gadget edges over the window edge plus the collar lines
    assert len([e for e in edges if '"0>1:' in e.split("->")[0] or '"0>1:' in e.split("->")[1]]) == 6
    assert len(edges) == diamond(1).graph(1).n_edges
    assert all("arrowhead=normal" in e for e in edges)
    assert "rankdir=BT" in text
    assert "{ rank=same; \"0>1:a2\" \"0>1:b2\" }" in text


def test_rational_refuses_floats():
    assert rational("3/9") == Fraction(1, 3)
    with pytest.raises(SpecError):
        rational(0.5, "x")
    with pytest.raises(SpecError):
        rational("one half", "x")


@given(st.lists(st.lists(st.fractions(max_denominator=50), min_size=3, max_size=3),
                min_size=1, max_size=5))
def test_csv_rationals_round_trip(rows):
    ids = [f"p{k}" for k in range(3)]
    square = (rows * 3)[:3]
    text = write_csv(([i, *r] for i, r in zip(ids, square)), ["id", *ids])
    assert read_matrix(text, ids) == square
    assert "." not in text.replace("id", "")


def test_read_values_forms():
    ids = ["a", "b"]
    assert read_values("point,u\nb,1/2\na,0\n", ids, "u") == [0, Fraction(1, 2)]
    assert read_values("0\n1/2\n", ids, "u") == [0, Fraction(1, 2)]
    with pytest.raises(SpecError):
        read_values("a,0\n", ids, "u")
    assert read_csv("a,b\n\n,\n") == [["a", "b"]]
