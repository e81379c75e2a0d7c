import math
import json

import numpy as np
import pytest

from qbesim.model import build_model, canonical_model, canonical_state, serialize_model
from qbesim.settings import Settings

DEPHASING_GAMMA = ((1.0, -1.0), (-1.0, 3.0))


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def random_state(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_model(rng: np.random.Generator):
    """Valid model with dims ≤ (2, 3, 3), c/C ≤ 0.1 and random geometry."""
    d_q = 2
    d_b = int(rng.integers(2, 4))
    d_e = int(rng.integers(1, 4))
    gamma = rng.uniform(-1.0, 1.0, size=(d_q, d_b))
    kappa = rng.uniform(-1.0, 1.0, size=(d_b, d_e))
    theta = list(rng.uniform(0.0, math.pi, size=d_b - 1))
    C = float(rng.uniform(0.5, 2.0))
    c = float(rng.uniform(0.001, 0.1)) * C
    return build_model((d_q, d_b, d_e), c, gamma, theta, C, kappa)


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def lapack_settings():
    return Settings(eigensolver="lapack")


@pytest.fixture
def canonical():
    return canonical_model(c=0.01, C=1.0)


@pytest.fixture
def dephasing():
    return canonical_model(c=0.01, C=1.0, gamma=DEPHASING_GAMMA)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def canonical_config_text(canonical):
    extras = {"protocol": {"include_sweep": False, "grid": {"t_end_tau": 1.0, "n_points": 21}}}
    return serialize_model(canonical, canonical_state(), extras)


@pytest.fixture
def config_file(tmp_path, canonical_config_text):
    def write(text=None, name="model.json", **overrides):
        document = json.loads(text or canonical_config_text)
        document.update(overrides)
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return path
    return write
