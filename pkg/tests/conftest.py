"""Shared fixtures and the acceptance summary printed after the run."""

from __future__ import annotations

import re
from collections import OrderedDict

import numpy as np
import pytest

from coliform_fpca.preprocess import Scale, WeeklySeries

_CRITERION = re.compile(r"test_c(\d+)_")
_outcomes: "OrderedDict[int, list[tuple[str, str]]]" = OrderedDict()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    m = _CRITERION.match(name)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(int(m.group(1)), []).append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_outcomes):
        results = _outcomes[c]
        failed = [n for n, o in results if o != "passed"]
        status = "FAIL" if failed else "PASS"
        detail = f" ({', '.join(failed)})" if failed else f" ({len(results)} checks)"
        terminalreporter.write_line(f"criterion {c}: {status}{detail}")


def series_from(site_id: str, values: dict, window=(1, 52), scale=Scale.LOG10_COUNT) -> WeeklySeries:
    return WeeklySeries(site_id, window, values, scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
