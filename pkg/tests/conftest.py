import os

import numpy as np
import pytest
from hypothesis import settings

from nlmv.frontier import clear_cache
from nlmv.model import MarketModel, TimeGrid

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def model_a():
    return MarketModel.constant(0.03, [0.2], [0.4], [[0.2]])


@pytest.fixture
def grid_a():
    return TimeGrid(1.0, 250)


@pytest.fixture
def factor_model():
    return MarketModel.from_dict({
        "r": 0.03,
        "theta_lower": [{"kind": "factor", "tanh": [0.2, 0.1, 1.0]}],
        "theta_upper": [{"kind": "factor", "tanh": [0.2, 0.1, 1.0]}],
        "sigma": [[0.2]],
        "factor": {"kappa": 1.0, "mean": 0.0, "vol": 0.3, "y0": 0.0, "component": 0},
    })


@pytest.fixture(autouse=True)
def _fresh_cache():
    clear_cache()
    yield


def random_sigma(rng, d):
    """Lower-triangular factor with a well-separated positive diagonal."""
    L = np.tril(rng.uniform(-0.5, 0.5, (d, d)), -1)
    L[np.diag_indices(d)] = rng.uniform(0.5, 1.5, d)
    return L


def random_thetas(rng, d, lo=-0.5, hi=0.5):
    a, b = rng.uniform(lo, hi, d), rng.uniform(lo, hi, d)
    return np.minimum(a, b), np.maximum(a, b)
