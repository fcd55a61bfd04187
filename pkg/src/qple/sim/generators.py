"""Synthetic datasets for the simulation cases."""

import logging

import numpy as np

from ..covariates import NormalChainModel
from ..exceptions import ContractError
from ..models import (
    Dataset,
    ErrorKind,
    ErrorModel,
    ExactCovariate,
    NoisyCovariate,
    PartiallyMissingCovariate,
)
from ..utils import spawn_rng
from .constants import MISSING_THRESHOLDS
from .functions import family_for, kernel_for, mean_response
from .models import Case, ErrorSpec

logger = logging.getLogger(__name__)


def generate_dataset(case: Case | str, n: int, seed: int = 0) -> Dataset:
    """Draw X ~ U[0,1]^d and responses from the case's true law.

    Raises:
        ContractError: If n is not positive.
    """
    case = Case(case)
    if n < 1:
        raise ContractError("Sample size must be positive")
    rng = spawn_rng(seed, 0)
    x = rng.uniform(size=(n, 2 if case.is_bivariate else 1))
    family = family_for(case)
    mu = mean_response(case, x)
    if family.family.value == "binomial":
        y = rng.binomial(family.trials, np.clip(mu / family.trials, 0.0, 1.0))
    else:
        y = rng.poisson(mu)
    observations = [ExactCovariate(row) for row in x]
    return Dataset(y.astype(float), observations, family, kernel_for(case), true_covariates=x)


def _truth(dataset: Dataset) -> np.ndarray:
    if dataset.true_covariates is None:
        raise ContractError("Simulated contamination needs the true covariates")
    return dataset.true_covariates


def apply_measurement_error(
    dataset: Dataset, error: ErrorSpec, n_exact: int, seed: int = 0
) -> Dataset:
    """Contaminate all but ``n_exact`` randomly chosen subjects with x + u.

    The fit's error model uses the assumed family (defaulting to the
    generating one) at the variance-matched scale. A zero scale leaves every
    subject exact.
    """
    x = _truth(dataset)
    if error.scale == 0.0:
        message = "degenerate error scale 0; all subjects left exact"
        logger.warning(message)
        result = dataset.with_observations([ExactCovariate(row) for row in x])
        result.warnings.append(message)
        return result
    rng = spawn_rng(seed, 1)
    n = dataset.n
    exact = set(rng.choice(n, size=min(n_exact, n), replace=False).tolist())
    if error.kind == ErrorKind.NORMAL:
        noise = rng.normal(0.0, error.scale, size=x.shape)
    else:
        noise = rng.uniform(-error.scale, error.scale, size=x.shape)
    model = ErrorModel(
        error.assumed or error.kind, np.full(x.shape[1], error.assumed_scale()), error.known
    )
    observations = [
        ExactCovariate(x[i]) if i in exact else NoisyCovariate(x[i] + noise[i], model)
        for i in range(n)
    ]
    return dataset.with_observations(observations)


def apply_missingness(dataset: Dataset, seed: int = 0) -> Dataset:
    """Delete x1, x2 or both, each with probability 1/3, when y exceeds the threshold.

    Missing subjects share one bivariate normal covariate model whose
    parameters are estimated during fitting.
    """
    x = _truth(dataset)
    if x.shape[1] != 2:
        raise ContractError("Missingness is defined for bivariate covariates")
    threshold = MISSING_THRESHOLDS[dataset.family.family.value]
    rng = spawn_rng(seed, 2)
    patterns = rng.integers(0, 3, size=dataset.n)
    model = NormalChainModel(dim=2)
    observations = []
    for i, row in enumerate(x):
        if dataset.y[i] <= threshold:
            observations.append(ExactCovariate(row))
            continue
        masked = row.copy()
        masked[[[0], [1], [0, 1]][patterns[i]]] = np.nan
        observations.append(PartiallyMissingCovariate(masked, model))
    incomplete = sum(isinstance(obs, PartiallyMissingCovariate) for obs in observations)
    logger.debug("Missingness removed coordinates from %d of %d subjects", incomplete, dataset.n)
    return dataset.with_observations(observations)


def naive_measurement_error(dataset: Dataset) -> Dataset:
    """Treat contaminated covariates as exact."""
    return dataset.with_observations(
        [
            ExactCovariate(obs.x_err) if isinstance(obs, NoisyCovariate) else obs
            for obs in dataset.observations
        ]
    )


def complete_cases(dataset: Dataset) -> Dataset:
    """Drop subjects with any missing coordinate."""
    keep = [
        i for i, obs in enumerate(dataset.observations) if not isinstance(obs, PartiallyMissingCovariate)
    ]
    return dataset.subset(keep)


def full_data(dataset: Dataset) -> Dataset:
    """Every subject at its true covariate."""
    return dataset.with_observations([ExactCovariate(row) for row in _truth(dataset)])


def count_incomplete(dataset: Dataset) -> int:
    return sum(isinstance(obs, PartiallyMissingCovariate) for obs in dataset.observations)
