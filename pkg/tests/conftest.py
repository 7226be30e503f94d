import numpy as np
import pytest

from cyclodsp.signals import Signal


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def real_signal(rng, n, fs=16000.0):
    return Signal(rng.standard_normal(n), fs)


def complex_signal(rng, n, fs=16000.0):
    return Signal(rng.standard_normal(n) + 1j * rng.standard_normal(n), fs)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
