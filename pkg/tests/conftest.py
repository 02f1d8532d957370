import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phmix.model import exp_mixture, marshall_olkin  # noqa: E402

# Acceptance tests append (criterion number, passed, detail) here. A criterion
# passes only if every record filed under its number passes.
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def example1():
    return exp_mixture((1.0, 2.0), (3.0, 4.0), (0.3, 0.3, 0.3))


@pytest.fixture
def example2():
    return marshall_olkin((1.0, 2.0, 0.5), (2.0, 3.0, 1.5), (0.4, 0.5, 0.6))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    grouped: dict[int, list[tuple[bool, str]]] = {}
    for number, passed, detail in ACCEPTANCE_RESULTS:
        grouped.setdefault(number, []).append((passed, detail))
    for number in sorted(grouped):
        entries = grouped[number]
        ok = all(p for p, _ in entries)
        detail = "; ".join(d for _, d in entries)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
