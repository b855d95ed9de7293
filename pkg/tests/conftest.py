import functools
import json
from pathlib import Path

import numpy as np
import pytest

from drem_observer import ObserverGains, ObserverState, builtin_scenario
from drem_observer.sim import SimConfig, run

FIXTURES = Path(__file__).parent / "fixtures"
CATALOG = ("S1", "S2", "S3", "S4", "W1")


@pytest.fixture(scope="session")
def reference():
    return json.loads((FIXTURES / "reference.json").read_text())


@functools.lru_cache(maxsize=None)
def catalog_run(name, variant="prop1", lam=1.0, kappa=1.0, rho=1.0, mode="adj", dt=1e-3, zhat0=None):
    sc = builtin_scenario(name)
    init = None
    if zhat0 is not None:
        init = ObserverState.zeros(sc.model.dims).replace(z_hat=list(zhat0))
    cfg = SimConfig(sc, variant, ObserverGains(lam, kappa, rho, mode), dt=dt, initial_overrides=init)
    return cfg, run(cfg)


@pytest.fixture(scope="session")
def runs():
    return catalog_run


def random_matrices(rng, n, p, scale=1.0):
    return rng.uniform(-scale, scale, size=(n, p, p))


def random_psd(rng, p):
    B = rng.normal(size=(p, p))
    return B @ B.T


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): exit criterion this test implements")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "_acceptance", None)
    if marker:
        n, text = marker
        prev = _ACCEPTANCE.get(n, (text, True))
        _ACCEPTANCE[n] = (text, prev[1] and report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m:
        report._acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        text, ok = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}")
