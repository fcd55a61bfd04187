"""Shared helpers for QPLE tests."""

import numpy as np

from qple.em import QPLEConfig, fit_fixed_rules
from qple.kernels import CovariateScaler, CubicSpline
from qple.quadrature import QuadratureRule


def tight_config(**overrides) -> QPLEConfig:
    """EM settings tight enough for finite-difference comparisons."""
    settings = {"em_tol": 1e-14, "f_tol": 1e-11, "max_iter": 5000, "check_null_space": False}
    settings.update(overrides)
    return QPLEConfig(**settings)


def random_rules(rng: np.random.Generator, n: int, max_nodes: int) -> list[QuadratureRule]:
    """Random discrete rules with nodes inside (0.05, 0.95)."""
    rules = []
    for _ in range(n):
        m = int(rng.integers(1, max_nodes + 1))
        nodes = rng.uniform(0.05, 0.95, m)
        weights = rng.uniform(0.2, 1.0, m)
        rules.append(QuadratureRule(nodes, weights / weights.sum()))
    return rules


def fit_on_rules(y, rules, lam, family, config=None, kernel=None, **kwargs):
    """Fixed-rule EM fit on the unit interval."""
    return fit_fixed_rules(
        np.asarray(y, dtype=float),
        rules,
        lam,
        family,
        kernel or CubicSpline(),
        CovariateScaler.identity(1),
        config or tight_config(),
        **kwargs,
    )
