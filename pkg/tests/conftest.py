"""Test fixtures for QPLE tests."""

import numpy as np
import pytest

from qple.covariates import NormalChainModel
from qple.expfam import ExpFamilySpec
from qple.kernels import CubicSpline, ThinPlate2D
from qple.models import (
    Dataset,
    ErrorKind,
    ErrorModel,
    ExactCovariate,
    NoisyCovariate,
    PartiallyMissingCovariate,
)


@pytest.fixture
def poisson():
    return ExpFamilySpec.poisson()


@pytest.fixture
def binomial2():
    return ExpFamilySpec.binomial(2)


@pytest.fixture
def exact_poisson_dataset(poisson):
    """Twelve exactly observed subjects with Poisson counts."""
    rng = np.random.default_rng(7)
    x = np.linspace(0.05, 0.95, 12)
    y = rng.poisson(np.exp(1.0 + np.sin(2 * np.pi * x)))
    return Dataset(y, [ExactCovariate([v]) for v in x], poisson, CubicSpline())


@pytest.fixture
def noisy_binomial_dataset(binomial2):
    """Binomial(2) data where all but four subjects carry normal error."""
    rng = np.random.default_rng(11)
    n = 20
    x = rng.uniform(0.0, 1.0, n)
    p = 1.0 / (1.0 + np.exp(-(2.0 * x - 1.0)))
    y = rng.binomial(2, p)
    error = ErrorModel(ErrorKind.NORMAL, np.array([0.1]))
    observations = [
        ExactCovariate([x[i]]) if i < 4 else NoisyCovariate([x[i] + rng.normal(0.0, 0.1)], error)
        for i in range(n)
    ]
    return Dataset(y, observations, binomial2, CubicSpline(), true_covariates=x.reshape(-1, 1))


@pytest.fixture
def missing_poisson_dataset(poisson):
    """Bivariate Poisson data with the second coordinate missing for every fourth subject."""
    rng = np.random.default_rng(5)
    n = 25
    x = rng.uniform(0.0, 1.0, (n, 2))
    y = rng.poisson(np.exp(0.5 + x[:, 0] - x[:, 1]))
    chain = NormalChainModel(dim=2)
    observations = [
        PartiallyMissingCovariate([x[i, 0], np.nan], chain) if i % 4 == 3 else ExactCovariate(x[i])
        for i in range(n)
    ]
    return Dataset(y, observations, poisson, ThinPlate2D(), true_covariates=x)


@pytest.fixture
def data_files(tmp_path):
    """A small Poisson data table with a sidecar of covariate specs."""
    data = tmp_path / "data.csv"
    data.write_text("y,x1\n1,0.10\n0,0.25\n2,0.40\n1,0.55\n3,0.70\n2,0.85\n4,0.95\n0,0.30\n")
    spec = tmp_path / "spec.json"
    spec.write_text(
        '{"default": {"type": "exact"},'
        ' "2": {"type": "normal_error", "sigma": 0.05},'
        ' "3": {"type": "normal_error", "sigma": 0.05},'
        ' "5": {"type": "discrete", "values": [0.8, 0.9], "probs": [0.5, 0.5]}}'
    )
    return data, spec
