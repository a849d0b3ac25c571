import numpy as np
import pytest

from pebackstep.model import SystemParams

# parameter sets used throughout the tests
UNSTABLE_WEAK = (1 / 3, 1 / 4, 1 / 2, 1 / 4)
UNSTABLE_STRONG = (0.5, 1.0, 1.0, 1.0)
STABLE = (1.0, 0.5, 0.5, 1.0)
C2_FEEDBACK = 1.2 - 1 / 3


def fitted_order(ns, errors):
    """Least-squares slope of ``log(err)`` against ``log(h)``, ``h = 1/N``."""
    h = 1.0 / np.asarray(ns, dtype=float)
    slope, _ = np.polyfit(np.log(h), np.log(np.asarray(errors)), 1)
    return float(slope)


@pytest.fixture
def weak():
    return SystemParams(*UNSTABLE_WEAK)


@pytest.fixture
def strong():
    return SystemParams(*UNSTABLE_STRONG)


@pytest.fixture
def stable():
    return SystemParams(*STABLE)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[number]
        terminalreporter.write_line(mod.format_line(number, ok, detail))
