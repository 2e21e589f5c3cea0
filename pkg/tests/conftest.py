import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wardrop.io import parse_config  # noqa: E402
from wardrop.latency import LatencySpec, NoiseSpec  # noqa: E402
from wardrop.network import UserSpec, build_network  # noqa: E402

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def braess():
    return parse_config("builtin:braess").network


@pytest.fixture(scope="session")
def fig1a():
    return parse_config("builtin:fig1a").network


@pytest.fixture(scope="session")
def fig1b():
    return parse_config("builtin:fig1b").network


@pytest.fixture(scope="session")
def parallel2():
    return parse_config("builtin:parallel2")


@pytest.fixture(scope="session")
def pigou():
    return parse_config("builtin:pigou").network


def two_links(phi1, phi2, rate=1.0):
    return build_network(["s", "t"], [("e1", "s", "t", phi1), ("e2", "s", "t", phi2)],
                         [UserSpec("1", "s", "t", rate, "all")])


@pytest.fixture
def disjoint_pair():
    """Two parallel unit-slope links, unit demand, unit noise on both."""
    net = two_links(LatencySpec.affine(1.0), LatencySpec.affine(1.0))
    return net, NoiseSpec.uniform(net, 1.0)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        detail = dict(report.user_properties).get("summary", "")
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict} {name}" + (f"  [{detail}]" if detail else ""))
