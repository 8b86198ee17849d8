import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("COEXPROC_HYPOTHESIS", "default"))

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "fixture"
SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"
sys.path.insert(0, str(SCRIPTS))


def random_psd(rng, size, rank=None, scale=1.0):
    rank = size if rank is None else rank
    A = rng.standard_normal((size, rank))
    return scale * A @ A.T / max(rank, 1)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_dir():
    return FIXTURE
