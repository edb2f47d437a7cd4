import numpy as np
import pytest

from onoffsbm import (
    ACTIVE,
    ConstantFunction,
    FiniteMeasure,
    GaussianBump,
    ModelParams,
    RandomSource,
)


@pytest.fixture
def params():
    return ModelParams(gamma=1.0, c=1.0, c_tilde=0.5, dim=1)


@pytest.fixture
def dirac_active():
    return FiniteMeasure.dirac([0.0], ACTIVE, 1.0)


@pytest.fixture
def bump():
    return GaussianBump(active_amp=1.0, dormant_amp=0.5, center=(0.0,), width=0.5, dim=1)


@pytest.fixture
def flat_one():
    return ConstantFunction(active_value=1.0, dormant_value=1.0, dim=1)


@pytest.fixture
def rng():
    return RandomSource(20240809)


def assert_within_sigma(observed, expected, stderr, n_sigma=3.0, context=""):
    gap = abs(observed - expected)
    assert gap <= n_sigma * stderr + 1e-15, (
        f"{context}: |{observed} - {expected}| = {gap} > {n_sigma} * {stderr}"
    )
