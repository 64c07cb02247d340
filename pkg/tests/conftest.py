import numpy as np
import pytest

from ybmodel import ModelParams
from ybmodel import ensemble
from ybmodel.spectral import load_reference_point


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def p_hat():
    return load_reference_point()


@pytest.fixture(scope="session")
def small_ensemble(params):
    """Four short files: enough for format, chain and matching checks."""
    return ensemble.generate_ensemble(7, 4, params, burn_pairs=200, snapshot_count=64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
