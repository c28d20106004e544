import numpy as np
import pytest

import popkit as pk
from popkit.observation import Normal, ObservationModel, Series

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def tiny_model(**kw):
    """Two-age model small enough for exact enumeration."""
    obs = ObservationModel([Series("young", {"age": "0"})], Normal(4.0))
    return pk.model_1(phi0=0.5, phi1=0.6, lam=0.8, n0=(3, 3), horizon=kw.pop("horizon", 5), observation=obs, **kw)


@pytest.fixture
def tiny():
    return tiny_model()
