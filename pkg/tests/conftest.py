import time

import pytest

from contour_mpc.gantry import build_experiment, simulate, synthesize
from contour_mpc.numsolve import residual_log

_SESSION_LOG = {}
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number n")


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so the solver criterion sees every solve of the session
    items.sort(key=lambda it: it.get_closest_marker("criterion") is not None)


@pytest.fixture(scope="session", autouse=True)
def session_residuals():
    """Worst LP/QP residuals over every Optimal solve in the test session."""
    with residual_log() as log:
        _SESSION_LOG["log"] = log
        yield log


@pytest.fixture(scope="session")
def experiment():
    """The default line-circle-line gantry experiment with its offline artifacts."""
    t0 = time.perf_counter()
    exp = synthesize(build_experiment())
    exp.extra["synthesis_seconds"] = time.perf_counter() - t0
    return exp


@pytest.fixture(scope="session")
def nominal_trace(experiment):
    t0 = time.perf_counter()
    trace = simulate(experiment)
    experiment.extra["simulation_seconds"] = time.perf_counter() - t0
    return trace


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            n, text = value
            detail = dict(report.user_properties).get("detail", "")
            _CRITERIA[n] = (text, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok, detail = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
