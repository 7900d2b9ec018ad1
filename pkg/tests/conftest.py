from collections import defaultdict

import numpy as np
import pytest

from wakepod.fields import StructuredGrid

CRITERIA = {
    1: "POD exactness (full-rank reconstruction, cross-method sigma)",
    2: "Eckart-Young truncation error",
    3: "energy spectrum bookkeeping",
    4: "synthetic-wake retained(1) trend",
    5: "Newmark SDOF period and forced amplitude",
    6: "added-mass piston frequency and divergence",
    7: "Aitken scalar fixed points",
    8: "RBF exactness, affine reproduction, identity morph",
    9: "derived fields (Q, strain, gradient order)",
    10: "CLI determinism",
}

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[marker.args[0]].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")


@pytest.fixture
def grid3():
    return StructuredGrid(6, 5, 4, 0.5, 0.4, 0.3, (1.0, -1.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
