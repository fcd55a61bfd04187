"""Quadrature rules for covariate distributions.

Gaussian rules for normal and uniform laws come from the closed-form
Hermite and Legendre rules. Other laws get their three-term recurrence
from the modified Chebyshev algorithm (modified moments against shifted
Legendre polynomials on the support), followed by Golub-Welsch.
Multivariate rules are built recursively from one-dimensional
conditional rules.
"""

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Self

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import roots_hermitenorm, roots_legendre
from scipy.stats import norm

from .constants import (
    CUSTOM_TRUNCATION_SDS,
    DISCRETIZATION_POINTS,
    GAUSS_MAX_NODES,
    GRID_TRUNCATION_SDS,
    WEIGHT_SUM_TOLERANCE,
)
from .exceptions import ContractError, DomainError, RuleConstructionError

logger = logging.getLogger(__name__)


class QuadratureMethod(str, Enum):
    """Rule family used for continuous distributions."""

    GAUSS = "gauss"
    GRID = "grid"


@dataclass
class QuadratureRule:
    """Nodes (m, d) with positive weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(nodes) == 0 or len(nodes) != len(weights):
            raise ContractError(
                f"Rule needs matching non-empty nodes and weights, got {len(nodes)} and {len(weights)}"
            )
        if not np.all(np.isfinite(nodes)) or not np.all(np.isfinite(weights)):
            raise ContractError("Rule nodes and weights must be finite")
        if np.any(weights <= 0):
            raise ContractError("Rule weights must be positive")
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            weights = weights / total
        self.nodes = nodes
        self.weights = weights

    @classmethod
    def point(cls, x: np.ndarray | float) -> Self:
        """One-node rule encoding an exactly observed covariate."""
        return cls(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1), np.ones(1))

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.nodes

    def merged(self) -> Self:
        """Merge identical nodes, summing their weights."""
        unique, inverse = np.unique(self.nodes, axis=0, return_inverse=True)
        if len(unique) == self.m:
            return self
        weights = np.bincount(inverse.reshape(-1), weights=self.weights, minlength=len(unique))
        return type(self)(unique, weights)

    def to_dict(self) -> dict:
        return {"nodes": self.nodes.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(np.asarray(data["nodes"], dtype=float), np.asarray(data["weights"], dtype=float))


class UnivariateDistribution(ABC):
    """One-dimensional probability law."""

    has_density: bool = True

    @property
    @abstractmethod
    def mean(self) -> float:
        pass

    @property
    @abstractmethod
    def sd(self) -> float:
        pass

    @property
    @abstractmethod
    def support(self) -> tuple[float, float]:
        pass

    def pdf(self, x: np.ndarray) -> np.ndarray:
        raise RuleConstructionError("distribution has no density", distribution=self)

    def truncated_support(self, sds: float) -> tuple[float, float]:
        """Support with each infinite endpoint replaced by mean -/+ sds*sd."""
        low, high = self.support
        if not np.isfinite(low):
            low = self.mean - sds * self.sd
        if not np.isfinite(high):
            high = self.mean + sds * self.sd
        return low, high


@dataclass(frozen=True)
class Normal(UnivariateDistribution):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(
                f"Normal scale must be positive, got {self.sigma}; use an exact covariate instead",
                value=self.sigma,
            )

    @property
    def mean(self) -> float:
        return float(self.mu)

    @property
    def sd(self) -> float:
        return float(self.sigma)

    @property
    def support(self) -> tuple[float, float]:
        return (-np.inf, np.inf)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return norm.pdf(x, loc=self.mu, scale=self.sigma)


@dataclass(frozen=True)
class Uniform(UnivariateDistribution):
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise DomainError(f"Uniform needs low < high, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2.0

    @property
    def sd(self) -> float:
        return (self.high - self.low) / np.sqrt(12.0)

    @property
    def support(self) -> tuple[float, float]:
        return (float(self.low), float(self.high))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, 1.0 / (self.high - self.low), 0.0)


@dataclass(frozen=True)
class Discrete(UnivariateDistribution):
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    has_density = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if len(values) == 0 or len(values) != len(probs):
            raise DomainError("Discrete law needs matching non-empty values and probs")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise DomainError("Discrete probabilities must be positive and sum to 1")

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def sd(self) -> float:
        values = np.asarray(self.values)
        return float(np.sqrt(np.dot(self.probs, (values - self.mean) ** 2)))

    @property
    def support(self) -> tuple[float, float]:
        return (float(min(self.values)), float(max(self.values)))

    def as_rule(self) -> QuadratureRule:
        return QuadratureRule(np.asarray(self.values), np.asarray(self.probs)).merged()


@dataclass(frozen=True)
class CustomDensity(UnivariateDistribution):
    """Law given by a density on [low, high] (either end may be infinite)."""

    density: Callable[[np.ndarray], np.ndarray]
    low: float
    high: float
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (self.low < self.high and self.sigma > 0):
            raise DomainError("Custom density needs low < high and a positive sd")

    @property
    def mean(self) -> float:
        return float(self.mu)

    @property
    def sd(self) -> float:
        return float(self.sigma)

    @property
    def support(self) -> tuple[float, float]:
        return (float(self.low), float(self.high))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.density(np.asarray(x, dtype=float)), dtype=float)


def _check_count(m: int) -> None:
    if not 1 <= m <= GAUSS_MAX_NODES:
        raise ContractError(f"Node count must be in 1..{GAUSS_MAX_NODES}, got {m}")


def _discretize(dist: UnivariateDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Discrete measure (points, masses) standing in for ``dist``."""
    if isinstance(dist, Discrete):
        return np.asarray(dist.values, dtype=float), np.asarray(dist.probs, dtype=float)
    low, high = dist.truncated_support(CUSTOM_TRUNCATION_SDS)
    x, w = roots_legendre(DISCRETIZATION_POINTS)
    points = (low + high) / 2.0 + (high - low) / 2.0 * x
    masses = w * (high - low) / 2.0 * dist.pdf(points)
    total = masses.sum()
    if not total > 0:
        raise RuleConstructionError("density integrates to zero on its support", distribution=dist)
    return points, masses / total


def _modified_chebyshev(
    points: np.ndarray, masses: np.ndarray, m: int, low: float, high: float
) -> tuple[np.ndarray, np.ndarray]:
    """Recurrence coefficients (alpha, beta) of the first m orthogonal polynomials."""
    center = (low + high) / 2.0
    half = (high - low) / 2.0
    a = np.full(2 * m, center)
    b = np.array([0.0] + [half**2 * k**2 / (4.0 * k**2 - 1.0) for k in range(1, 2 * m)])

    # modified moments nu_l = integral of the monic shifted Legendre polynomial p_l
    nu = np.empty(2 * m)
    p_prev = np.zeros_like(points)
    p_curr = np.ones_like(points)
    for level in range(2 * m):
        nu[level] = np.dot(masses, p_curr)
        p_prev, p_curr = p_curr, (points - a[level]) * p_curr - b[level] * p_prev

    alpha = np.zeros(m)
    beta = np.zeros(m)
    alpha[0] = a[0] + nu[1] / nu[0]
    beta[0] = nu[0]
    sigma_prev = np.zeros(2 * m)
    sigma_curr = nu.copy()
    for k in range(1, m):
        sigma_next = np.zeros(2 * m)
        for level in range(k, 2 * m - k):
            sigma_next[level] = (
                sigma_curr[level + 1]
                - (alpha[k - 1] - a[level]) * sigma_curr[level]
                - beta[k - 1] * sigma_prev[level]
                + b[level] * sigma_curr[level - 1]
            )
        if not sigma_next[k] > 1e-14 * half ** (2 * k) * nu[0]:
            raise RuleConstructionError(
                f"recurrence breaks down at degree {k} (norm {sigma_next[k]:.3g})", nodes=m
            )
        alpha[k] = a[k] + sigma_next[k + 1] / sigma_next[k] - sigma_curr[k] / sigma_curr[k - 1]
        beta[k] = sigma_next[k] / sigma_curr[k - 1]
        sigma_prev, sigma_curr = sigma_curr, sigma_next
    return alpha, beta


def _golub_welsch(alpha: np.ndarray, beta: np.ndarray) -> QuadratureRule:
    if len(alpha) == 1:
        return QuadratureRule(alpha.reshape(1, 1), np.ones(1))
    nodes, vectors = eigh_tridiagonal(alpha, np.sqrt(beta[1:]))
    weights = beta[0] * vectors[0, :] ** 2
    if np.any(weights <= 0):
        raise RuleConstructionError("Golub-Welsch produced a non-positive weight", nodes=len(alpha))
    return QuadratureRule(nodes.reshape(-1, 1), weights)


def gauss_rule(dist: UnivariateDistribution, m: int) -> QuadratureRule:
    """m-node Gaussian rule, exact for polynomials of degree <= 2m - 1.

    Raises:
        ContractError: If m is outside 1..20.
        RuleConstructionError: If the recurrence is numerically singular.
    """
    _check_count(m)
    if m == 1:
        return QuadratureRule.point(dist.mean)
    if isinstance(dist, Normal):
        x, w = roots_hermitenorm(m)
        return QuadratureRule((dist.mu + dist.sigma * x).reshape(-1, 1), w / w.sum())
    if isinstance(dist, Uniform):
        x, w = roots_legendre(m)
        return QuadratureRule((dist.mean + (dist.high - dist.low) / 2.0 * x).reshape(-1, 1), w / w.sum())
    if isinstance(dist, Discrete) and m >= len(dist.as_rule().weights):
        return dist.as_rule()
    points, masses = _discretize(dist)
    low, high = float(points.min()), float(points.max())
    if not high > low:
        return QuadratureRule.point(points[0])
    alpha, beta = _modified_chebyshev(points, masses, m, low, high)
    return _golub_welsch(alpha, beta)


def grid_rule(dist: UnivariateDistribution, m: int) -> QuadratureRule:
    """m equally spaced nodes on the (truncated) support, weights by density."""
    _check_count(m)
    if not dist.has_density:
        raise RuleConstructionError("grid rule requires a density", distribution=dist, nodes=m)
    low, high = dist.truncated_support(GRID_TRUNCATION_SDS)
    nodes = np.array([(low + high) / 2.0]) if m == 1 else np.linspace(low, high, m)
    density = dist.pdf(nodes)
    keep = density > 0
    if not np.any(keep):
        raise RuleConstructionError("density vanishes at every grid node", distribution=dist, nodes=m)
    return QuadratureRule(nodes[keep].reshape(-1, 1), density[keep] / density[keep].sum())


def rule_for_distribution(
    dist: UnivariateDistribution, m: int, method: QuadratureMethod = QuadratureMethod.GAUSS
) -> QuadratureRule:
    """Dispatch on method; discrete laws always use their own support when m allows."""
    if isinstance(dist, Discrete):
        return gauss_rule(dist, min(m, GAUSS_MAX_NODES))
    if method == QuadratureMethod.GRID:
        return grid_rule(dist, m)
    return gauss_rule(dist, m)


class ConditionalChain(Protocol):
    """Joint law expressed as a chain of one-dimensional conditionals."""

    @property
    def dim(self) -> int: ...

    def conditional(self, k: int, prefix: np.ndarray) -> UnivariateDistribution:
        """Law of coordinate k given coordinates 0..k-1 equal to ``prefix``."""
        ...


@dataclass(frozen=True)
class IndependentChain:
    """Product of independent one-dimensional laws."""

    marginals: tuple[UnivariateDistribution, ...]

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def conditional(self, k: int, prefix: np.ndarray) -> UnivariateDistribution:
        return self.marginals[k]


@dataclass
class MultivariateNormal:
    """Multivariate normal with closed-form conditionals."""

    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.dim, self.dim):
            raise ContractError(f"Covariance shape {self.cov.shape} does not match mean length {self.dim}")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise RuleConstructionError("covariance is not positive definite") from exc

    @property
    def dim(self) -> int:
        return len(self.mean)

    def conditional(self, k: int, prefix: np.ndarray) -> Normal:
        if k == 0:
            return Normal(self.mean[0], float(np.sqrt(self.cov[0, 0])))
        cross = self.cov[k, :k]
        coef = np.linalg.solve(self.cov[:k, :k], cross)
        mu = self.mean[k] + coef @ (np.asarray(prefix, dtype=float) - self.mean[:k])
        var = self.cov[k, k] - coef @ cross
        if not var > 0:
            raise RuleConstructionError(f"conditional variance of coordinate {k} is not positive")
        return Normal(float(mu), float(np.sqrt(var)))


def multivariate_rule(
    joint: ConditionalChain,
    nodes_per_dim: Sequence[int],
    method: QuadratureMethod = QuadratureMethod.GAUSS,
) -> QuadratureRule:
    """Recursive product rule from one-dimensional conditional rules.

    Each node of the rule for coordinates 0..k-1 is extended by the rule of
    the conditional law of coordinate k; weights multiply.

    Raises:
        ContractError: If ``nodes_per_dim`` does not have one entry per coordinate.
    """
    counts = list(nodes_per_dim)
    if len(counts) != joint.dim:
        raise ContractError(f"nodes_per_dim has {len(counts)} entries for a {joint.dim}-dimensional law")
    prefixes = np.zeros((1, 0))
    weights = np.ones(1)
    for k, m in enumerate(counts):
        next_nodes: list[np.ndarray] = []
        next_weights: list[float] = []
        for prefix, weight in zip(prefixes, weights):
            rule = rule_for_distribution(joint.conditional(k, prefix), m, method)
            for z, pi in zip(rule.nodes[:, 0], rule.weights):
                next_nodes.append(np.append(prefix, z))
                next_weights.append(weight * pi)
        prefixes = np.array(next_nodes)
        weights = np.array(next_weights)
    return QuadratureRule(prefixes, weights)


def parse_distribution(text: str) -> UnivariateDistribution:
    """Parse ``normal:mu:sigma``, ``uniform:low:high`` or ``discrete:v1,v2,..:p1,p2,..``.

    Raises:
        ContractError: On an unknown law or malformed parameters.
    """
    name, *args = text.strip().split(":")
    try:
        match name.lower(), args:
            case "normal", [mu, sigma]:
                return Normal(float(mu), float(sigma))
            case "uniform", [low, high]:
                return Uniform(float(low), float(high))
            case "discrete", [values, probs]:
                return Discrete(
                    tuple(float(v) for v in values.split(",")), tuple(float(p) for p in probs.split(","))
                )
    except ValueError as exc:
        raise ContractError(f"Malformed distribution {text!r}: {exc}") from exc
    raise ContractError(
        f"Unknown distribution {text!r}; use normal:mu:sigma, uniform:low:high or discrete:values:probs"
    )
