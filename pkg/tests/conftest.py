import json
import sys
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from l1weaver.builders import build_diamond, build_line, build_split  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
_ACCEPTANCE: list[str] = []


@lru_cache(maxsize=None)
def split(N: int):
    return build_split(N)


@lru_cache(maxsize=None)
def diamond(N: int):
    return build_diamond(N)


@lru_cache(maxsize=None)
def padded_line(N: int):
    # one unit of line on each side so window seeds have in and out edges
    return build_line(N, span=(-1, 2), window=(0, 1))


@pytest.fixture(scope="session")
def baselines():
    raw = json.loads((FIXTURES / "baselines.json").read_text())
    return {k: Fraction(v["value"]) for k, v in raw.items()}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""
    def record(number: int, title: str, passed: bool, detail: str = ""):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {title}"
        if detail:
            line += f"  [{detail}]"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
