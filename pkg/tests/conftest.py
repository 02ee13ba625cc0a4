"""
Shared fixtures
"""
import numpy as np
import pytest

from grm.core.config import settings
from tests.factories import tiny_model_config, tiny_run_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return tiny_model_config()


@pytest.fixture
def tiny_run():
    return tiny_run_config()


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    """A GRM_SEED in the developer's environment must not leak into tests"""
    monkeypatch.setattr(settings, "GRM_SEED", None)
