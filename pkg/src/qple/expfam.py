"""Exponential-family responses with known scale: Binomial(k) and Poisson.

The density of a response y at natural parameter t is
``exp(y*t - b(t) + c(y))``. Fitting code works with the canonical part
``y*t - b(t)`` only, so the methods on :class:`ExpFamilySpec` accept
real-valued (perturbed) responses. The module-level functions are the
validated scalar/array surface.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Self

import numpy as np
from scipy.special import expit, gammaln

from .exceptions import DomainError


class Family(str, Enum):
    """Supported response families."""

    BINOMIAL = "binomial"
    POISSON = "poisson"


@dataclass(frozen=True)
class ExpFamilySpec:
    """Response family with its trial count (binomial only)."""

    family: Family
    trials: int = 1

    def __post_init__(self) -> None:
        if self.family == Family.BINOMIAL and (int(self.trials) != self.trials or self.trials < 1):
            raise DomainError(f"Binomial trials must be a positive integer, got {self.trials}")

    @classmethod
    def binomial(cls, trials: int) -> Self:
        return cls(Family.BINOMIAL, int(trials))

    @classmethod
    def poisson(cls) -> Self:
        return cls(Family.POISSON, 1)

    @classmethod
    def parse(cls, text: str) -> Self:
        """Parse ``binomial:k`` or ``poisson``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == Family.POISSON.value and not arg:
            return cls.poisson()
        if name == Family.BINOMIAL.value:
            try:
                return cls.binomial(int(arg) if arg else 1)
            except ValueError as exc:
                raise DomainError(f"Invalid binomial trial count '{arg}'") from exc
        raise DomainError(f"Unknown family '{text}'. Expected binomial:k or poisson")

    @property
    def label(self) -> str:
        if self.family == Family.BINOMIAL:
            return f"binomial:{self.trials}"
        return "poisson"

    def cumulant(self, t: np.ndarray) -> np.ndarray:
        """b(t), vectorized, without input validation."""
        t = np.asarray(t, dtype=float)
        if self.family == Family.BINOMIAL:
            return self.trials * (np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t))))
        with np.errstate(over="ignore"):
            return np.exp(t)

    def first(self, t: np.ndarray) -> np.ndarray:
        """b'(t), the mean."""
        t = np.asarray(t, dtype=float)
        if self.family == Family.BINOMIAL:
            return self.trials * expit(t)
        with np.errstate(over="ignore"):
            return np.exp(t)

    def second(self, t: np.ndarray) -> np.ndarray:
        """b''(t), the variance."""
        t = np.asarray(t, dtype=float)
        if self.family == Family.BINOMIAL:
            return self.trials * expit(t) * expit(-t)
        with np.errstate(over="ignore"):
            return np.exp(t)

    def canonical_loglik(self, y: np.ndarray, t: np.ndarray) -> np.ndarray:
        """y*t - b(t); c(y) is dropped."""
        return np.asarray(y, dtype=float) * np.asarray(t, dtype=float) - self.cumulant(t)

    def link(self, mean: np.ndarray) -> np.ndarray:
        """Natural parameter for a given mean."""
        mean = np.asarray(mean, dtype=float)
        if self.family == Family.BINOMIAL:
            p = mean / self.trials
            return np.log(p) - np.log1p(-p)
        return np.log(mean)

    def in_support(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        integral = np.isfinite(y) & (y == np.round(y)) & (y >= 0)
        if self.family == Family.BINOMIAL:
            return integral & (y <= self.trials)
        return integral

    def log_base(self, y: np.ndarray) -> np.ndarray:
        """c(y): log binomial coefficient or minus log factorial."""
        y = np.asarray(y, dtype=float)
        if self.family == Family.BINOMIAL:
            k = float(self.trials)
            return gammaln(k + 1.0) - gammaln(y + 1.0) - gammaln(k - y + 1.0)
        return -gammaln(y + 1.0)

    def support(self, upper: int | None = None) -> np.ndarray:
        """Support points; poisson support is cut at ``upper``."""
        if self.family == Family.BINOMIAL:
            return np.arange(self.trials + 1, dtype=float)
        if upper is None:
            raise DomainError("Poisson support is unbounded; an upper cut is required")
        return np.arange(upper + 1, dtype=float)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "trials": self.trials}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(Family(data["family"]), int(data.get("trials", 1)))


def _finite(t: np.ndarray | float) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Natural parameter must be finite", value=t)
    return arr


def _scalar_or_array(value: np.ndarray) -> float | np.ndarray:
    return float(value) if value.ndim == 0 else value


def b(t: np.ndarray | float, fam: ExpFamilySpec) -> float | np.ndarray:
    """Cumulant function b(t)."""
    return _scalar_or_array(fam.cumulant(_finite(t)))


def mean(t: np.ndarray | float, fam: ExpFamilySpec) -> float | np.ndarray:
    """Mean b'(t)."""
    return _scalar_or_array(fam.first(_finite(t)))


def variance(t: np.ndarray | float, fam: ExpFamilySpec) -> float | np.ndarray:
    """Variance b''(t)."""
    return _scalar_or_array(fam.second(_finite(t)))


def log_density(
    y: np.ndarray | float, t: np.ndarray | float, fam: ExpFamilySpec
) -> float | np.ndarray:
    """Full log density y*t - b(t) + c(y).

    Raises:
        DomainError: If y lies outside the family support or t is not finite.
    """
    t_arr = _finite(t)
    y_arr = np.asarray(y, dtype=float)
    if not np.all(fam.in_support(y_arr)):
        raise DomainError(f"Response outside {fam.label} support", value=y)
    return _scalar_or_array(fam.canonical_loglik(y_arr, t_arr) + fam.log_base(y_arr))
