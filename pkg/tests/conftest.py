"""Shared fixtures."""

import math

import numpy as np
import pytest

from shiftlab.core import (
    CovariateBlock,
    LabeledBlock,
    OutcomeModelParams,
    PooledDataset,
    TiltParams,
)
from shiftlab.simlab import SimConfig, gen_replicate

THETA_STAR = (math.log(5), math.log(0.05), math.log(0.25), math.log(12))


@pytest.fixture
def theta_star():
    """Tilt of the reference simulation design."""
    return TiltParams(THETA_STAR[0], [THETA_STAR[1]], THETA_STAR[2], [THETA_STAR[3]])


@pytest.fixture
def small_config():
    """Reference design at a size that fits quickly."""
    return SimConfig.reference_defaults(n1=400, n0=400, reps=2, bootstrap_B=0, truth_size=20_000)


@pytest.fixture
def small_replicate(small_config):
    return gen_replicate(small_config, 0)


@pytest.fixture
def mirrored_data():
    """Target covariates are an exact copy of the source covariates."""
    rng = np.random.default_rng(7)
    x1 = rng.integers(0, 2, size=(60, 1)).astype(float)
    x2 = rng.normal(size=(60, 2))
    covariates = CovariateBlock(x1, x2)
    y = (rng.random(60) < 0.5).astype(np.int64)
    return PooledDataset(LabeledBlock(covariates, y), covariates)


@pytest.fixture
def random_xi():
    return OutcomeModelParams(0.2, [0.8, -0.5, 0.3])
