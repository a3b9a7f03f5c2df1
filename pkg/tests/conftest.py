import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from repball.flows import make_system

# criterion 10 asks for 1000 cases per invariant; REPBALL_FAST trims that for quick local runs
settings.register_profile(
    "full", max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.register_profile("fast", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("fast" if os.environ.get("REPBALL_FAST") else "full")


@pytest.fixture(scope="session")
def torus():
    return make_system("torus")


@pytest.fixture(scope="session")
def shift2():
    return make_system("shift2")


@pytest.fixture(scope="session")
def cat():
    return make_system("cat")


@pytest.fixture(scope="session")
def systems(torus, shift2, cat):
    return {"torus": torus, "shift2": shift2, "cat": cat}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ------------------------------------------------------------

_PROPERTY_OUTCOMES: list[tuple[str, bool]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "hypothesis" in report.keywords:
        _PROPERTY_OUTCOMES.append((report.nodeid, report.passed))


def pytest_collection_modifyitems(items):
    for item in items:
        if getattr(getattr(item, "obj", None), "is_hypothesis_test", False):
            item.add_marker("hypothesis")


def pytest_configure(config):
    config.addinivalue_line("markers", "hypothesis: property-based test")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 10):
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        else:
            tr.write_line(f"criterion {n}: NOT RUN")
    examples = settings().max_examples
    if not _PROPERTY_OUTCOMES:
        tr.write_line("criterion 10: NOT RUN - no property tests in this session")
        return
    failed = [nid for nid, ok in _PROPERTY_OUTCOMES if not ok]
    ok = not failed and examples >= 1000
    detail = f"{len(_PROPERTY_OUTCOMES)} property tests at max_examples={examples}, {len(failed)} failed"
    if failed:
        detail += ": " + ", ".join(failed[:5])
    tr.write_line(f"criterion 10: {'PASS' if ok else 'FAIL'} - {detail}")
