import numpy as np
import pytest

from pintsolve import aao
from pintsolve.config import settings
from pintsolve.verify import heat_system, random_nsd_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def heat():
    """1D heat equation with M = 8 steps and N = 15 interior nodes."""
    return heat_system(8, 15)


@pytest.fixture
def nsd_system(rng):
    return aao.from_a_tilde(random_nsd_matrix(10, rng, 5.0), 6)


@pytest.fixture(autouse=True)
def isolated_storage(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "cache_dir", tmp_path / "cache")
    monkeypatch.setattr(settings, "output_dir", tmp_path / "outputs")
    monkeypatch.setattr(settings, "threads", 1)
