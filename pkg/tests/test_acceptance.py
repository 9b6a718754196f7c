"""Acceptance criteria 1-13, each at its stated tolerance.

Every criterion prints one [PASS]/[FAIL] line; the lines are also gathered
into the terminal summary by conftest.py.
"""
import pytest

from qpng_lab.validation import CRITERIA, run_criterion

LINES: dict = {}

LONG = {2, 3, 4, 5, 7, 8}


@pytest.mark.parametrize("cid", [
    pytest.param(c, marks=pytest.mark.slow) if c in LONG else c for c in sorted(CRITERIA)
])
def test_criterion(cid):
    res = run_criterion(cid)
    LINES[cid] = res.line()
    print(res.line())
    print(f"    measured: {res.measured}")
    if res.note:
        print(f"    note: {res.note}")
    assert res.passed, f"criterion {cid} failed: {res.measured} (tolerance {res.tolerance})"
