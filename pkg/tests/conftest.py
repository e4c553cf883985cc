import os

import numpy as np
import pytest

from appfkit.netmodel import load_network

HERE = os.path.dirname(__file__)
FIXTURES = os.path.join(os.path.dirname(HERE), "fixtures")
SMALL = ["2bus", "feeder3", "threephase6", "mesh10"]

_acceptance_lines = []


def fixture_path(name):
    return os.path.join(FIXTURES, name + ".json")


@pytest.fixture(params=SMALL)
def small_net(request):
    return load_network(fixture_path(request.param))


@pytest.fixture(scope="session")
def feeder():
    return load_network(fixture_path("synthetic_feeder"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    status = "PASS" if rep.passed else "FAIL"
    line = f"criterion {marker.args[0]:>2}: {status}  {marker.args[1]}"
    detail = dict(item.user_properties).get("detail")
    if detail:
        line += f" ({detail})"
    _acceptance_lines.append((marker.args[0], line))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)
