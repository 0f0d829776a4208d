import numpy as np
import pytest

from rcprune.data import gen_henon, normalize
from rcprune.reservoir import Hyperparams, fit, init_reservoir

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[n] = (rep.outcome, item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome, name = _CRITERIA[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status} ({name})")


@pytest.fixture(scope="session")
def henon():
    return normalize(gen_henon())


@pytest.fixture(scope="session")
def henon_model(henon):
    return fit(init_reservoir(Hyperparams(), 50, 1, seed=0), henon)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
