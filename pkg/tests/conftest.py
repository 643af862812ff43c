import numpy as np
import pytest

from fedchan import nn


def numeric_grad(f, x: np.ndarray, coords, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. ``x[coords]`` (``x`` is mutated and restored)."""
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def rel_error(analytic, numeric, floor=1e-6):
    """Relative error; gradients smaller than ``floor`` are compared on an absolute scale."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pick_coords(n, k, rng):
    return rng.choice(n, size=min(k, n), replace=False)


@pytest.fixture
def tiny_specs():
    return nn.dense_stack(4, [6], 3)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
