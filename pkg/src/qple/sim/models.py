"""Data models for simulation scenarios and comparisons."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from ..exceptions import ContractError
from ..models import ErrorKind
from ..quadrature import QuadratureMethod
from .constants import (
    DEFAULT_REPLICATES,
    DEFAULT_SIM_NODES,
    FRANKE_N,
    MAX_REPLICATES,
    MEASUREMENT_ERROR_EXACT,
    MEASUREMENT_ERROR_N,
    METHODS,
    SIM_LAMBDA_COUNT,
    SIM_LAMBDA_HI,
    SIM_LAMBDA_LO,
    TUNINGS,
    UNIFORM_VARIANCE,
)


class Case(str, Enum):
    """Simulation test cases."""

    I = "i"  # noqa: E741
    II = "ii"
    III = "iii"
    FRANKE_BINOMIAL = "franke_binomial"
    FRANKE_POISSON = "franke_poisson"

    @property
    def is_bivariate(self) -> bool:
        return self in (Case.FRANKE_BINOMIAL, Case.FRANKE_POISSON)


@dataclass
class ErrorSpec:
    """Measurement error used to contaminate covariates.

    ``assumed`` names the error family the fit assumes when it differs
    from the generating one.
    """

    kind: ErrorKind
    scale: float
    known: bool = True
    assumed: ErrorKind | None = None

    @classmethod
    def from_ratio(cls, kind: ErrorKind | str, ratio: float, known: bool = True) -> "ErrorSpec":
        """Scale giving var(u) / var(X) = ratio for X ~ U[0, 1]."""
        kind = ErrorKind(kind)
        variance = ratio * UNIFORM_VARIANCE
        scale = np.sqrt(variance) if kind == ErrorKind.NORMAL else np.sqrt(3.0 * variance)
        return cls(kind, float(scale), known)

    @property
    def variance(self) -> float:
        return self.scale**2 if self.kind == ErrorKind.NORMAL else self.scale**2 / 3.0

    @property
    def noise_to_signal(self) -> float:
        return self.variance / UNIFORM_VARIANCE

    def assumed_scale(self) -> float:
        """Scale of the assumed family with the same variance."""
        kind = self.assumed or self.kind
        return float(np.sqrt(self.variance) if kind == ErrorKind.NORMAL else np.sqrt(3.0 * self.variance))


@dataclass
class Scenario:
    """One simulation design."""

    case: Case
    n: int | None = None
    error: ErrorSpec | None = None
    missingness: bool = False
    n_exact: int = MEASUREMENT_ERROR_EXACT
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    nodes_per_dim: int = DEFAULT_SIM_NODES
    method: QuadratureMethod = QuadratureMethod.GAUSS
    lambda_grid: tuple[float, float, int] = (SIM_LAMBDA_LO, SIM_LAMBDA_HI, SIM_LAMBDA_COUNT)
    methods: tuple[str, ...] = METHODS
    tunings: tuple[str, ...] = TUNINGS

    def __post_init__(self) -> None:
        self.case = Case(self.case)
        if self.n is None:
            self.n = FRANKE_N if self.case.is_bivariate else MEASUREMENT_ERROR_N
        if self.missingness and not self.case.is_bivariate:
            raise ContractError("Missingness scenarios use the bivariate Franke cases")
        if self.error is not None and self.case.is_bivariate:
            raise ContractError("Measurement-error scenarios use the univariate cases")
        if not 1 <= self.replicates <= MAX_REPLICATES:
            raise ContractError(f"Replicates must be in 1..{MAX_REPLICATES}")
        if unknown := set(self.methods) - set(METHODS):
            raise ContractError(f"Unknown methods {sorted(unknown)}")
        if unknown := set(self.tunings) - set(TUNINGS):
            raise ContractError(f"Unknown tunings {sorted(unknown)}")

    @property
    def dim(self) -> int:
        return 2 if self.case.is_bivariate else 1


@dataclass
class ComparisonRecord:
    """TKL of one method under one tuning rule in one replicate."""

    replicate: int
    method: str
    tuning: str
    lambda_selected: float
    tkl: float

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "method": self.method,
            "tuning": self.tuning,
            "lambda_selected": self.lambda_selected,
            "tkl": self.tkl,
        }


@dataclass
class ComparisonResult:
    """Per-replicate records plus scenario diagnostics."""

    scenario: Scenario
    records: list[ComparisonRecord] = field(default_factory=list)
    incomplete_counts: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        columns = ["replicate", "method", "tuning", "lambda_selected", "tkl"]
        frame = pd.DataFrame([record.to_dict() for record in self.records], columns=columns)
        return frame.sort_values(["replicate", "method", "tuning"], kind="stable").reset_index(drop=True)

    def summary(self) -> pd.DataFrame:
        """Box-plot quantiles of TKL per method and tuning."""
        grouped = self.to_frame().groupby(["method", "tuning"], sort=True)["tkl"]
        return pd.DataFrame(
            {
                "count": grouped.count(),
                "min": grouped.min(),
                "q25": grouped.quantile(0.25),
                "median": grouped.median(),
                "q75": grouped.quantile(0.75),
                "max": grouped.max(),
                "mean": grouped.mean(),
            }
        ).reset_index()

    def median(self, method: str, tuning: str) -> float:
        frame = self.to_frame()
        chosen = frame[(frame.method == method) & (frame.tuning == tuning)]
        return float(chosen.tkl.median())
