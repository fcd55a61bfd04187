"""Data models for QPLE fitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Self

import numpy as np

from .exceptions import ContractError
from .expfam import ExpFamilySpec
from .kernels import (
    CovariateScaler,
    KernelSpec,
    as_points,
    cross_gram,
    gram,
    kernel_from_dict,
    null_design,
)
from .quadrature import (
    ConditionalChain,
    IndependentChain,
    Normal,
    QuadratureMethod,
    QuadratureRule,
    Uniform,
    UnivariateDistribution,
    multivariate_rule,
)

if TYPE_CHECKING:
    from .covariates import CovariateParams, NormalChainModel


class ErrorKind(str, Enum):
    """Measurement-error families."""

    NORMAL = "normal"
    UNIFORM = "uniform"


@dataclass
class ErrorModel:
    """Zero-mean covariate measurement error shared by all noisy subjects.

    ``scale`` holds sigma (normal) or the half-width delta (uniform) per
    coordinate. When ``known`` is False the scale is only a starting value.
    """

    kind: ErrorKind
    scale: np.ndarray
    known: bool = True

    def __post_init__(self) -> None:
        self.kind = ErrorKind(self.kind)
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.scale)

    def distribution(self, scale: np.ndarray | None = None) -> IndependentChain:
        scale = self.scale if scale is None else np.atleast_1d(scale)
        if self.kind == ErrorKind.NORMAL:
            return IndependentChain(tuple(Normal(0.0, float(s)) for s in scale))
        return IndependentChain(tuple(Uniform(-float(s), float(s)) for s in scale))

    def rule(
        self,
        nodes_per_dim: int,
        method: QuadratureMethod = QuadratureMethod.GAUSS,
        scale: np.ndarray | None = None,
    ) -> QuadratureRule:
        """Quadrature rule for the error law u."""
        return multivariate_rule(self.distribution(scale), [nodes_per_dim] * self.dim, method)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "scale": self.scale.tolist(), "known": self.known}


@dataclass
class ExactCovariate:
    """Exactly observed covariate vector."""

    x: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))


@dataclass
class DiscreteCovariate:
    """Covariate known up to a finite distribution over candidate vectors."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        self.values = values.reshape(len(values), -1)
        self.probs = np.asarray(self.probs, dtype=float)


@dataclass
class DistributionalCovariate:
    """Covariate following a known continuous law."""

    law: UnivariateDistribution | ConditionalChain


@dataclass
class NoisyCovariate:
    """Covariate observed as x + u with u drawn from a shared error model."""

    x_err: np.ndarray
    error_model: ErrorModel

    def __post_init__(self) -> None:
        self.x_err = np.atleast_1d(np.asarray(self.x_err, dtype=float))


@dataclass
class PartiallyMissingCovariate:
    """Covariate vector with NaN in the missing coordinates."""

    x: np.ndarray
    model: NormalChainModel

    def __post_init__(self) -> None:
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.x)


CovariateObservation = (
    ExactCovariate
    | DiscreteCovariate
    | DistributionalCovariate
    | NoisyCovariate
    | PartiallyMissingCovariate
)


@dataclass
class Dataset:
    """Responses with one covariate observation per subject."""

    y: np.ndarray
    observations: list[CovariateObservation]
    family: ExpFamilySpec
    kernel: KernelSpec
    true_covariates: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(self.y) != len(self.observations):
            raise ContractError(
                f"{len(self.y)} responses for {len(self.observations)} covariate observations"
            )

    @property
    def n(self) -> int:
        return len(self.y)

    def subset(self, indices: np.ndarray | list[int]) -> Self:
        idx = [int(i) for i in indices]
        truth = None if self.true_covariates is None else self.true_covariates[idx]
        return replace(
            self,
            y=self.y[idx],
            observations=[self.observations[i] for i in idx],
            true_covariates=truth,
            warnings=list(self.warnings),
        )

    def with_observations(self, observations: list[CovariateObservation]) -> Self:
        return replace(self, observations=list(observations), warnings=list(self.warnings))


@dataclass
class StackedRules:
    """Per-subject rules laid end to end as one node list of length N."""

    rules: list[QuadratureRule]
    nodes: np.ndarray = field(init=False, repr=False)
    pi: np.ndarray = field(init=False, repr=False)
    sizes: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False, repr=False)
    subject: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.nodes = np.vstack([rule.nodes for rule in self.rules])
        self.pi = np.concatenate([rule.weights for rule in self.rules])
        self.sizes = np.array([rule.m for rule in self.rules], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.subject = np.repeat(np.arange(len(self.rules)), self.sizes)

    @property
    def n(self) -> int:
        return len(self.rules)

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Repeat a per-subject vector to one entry per node."""
        return np.asarray(values, dtype=float)[self.subject]

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        return [np.asarray(values[self.block(i)]) for i in range(self.n)]

    def drop(self, i: int) -> Self:
        return type(self)([rule for k, rule in enumerate(self.rules) if k != i])


@dataclass
class RepresenterModel:
    """Fitted function f(x) = sum_v d_v phi_v(x) + sum_k c_k K(x, z_k).

    ``nodes`` are stored on the scaled (unit-cube) coordinates; queries are
    given in raw covariate units and mapped through ``scaler``.
    """

    d: np.ndarray
    c: np.ndarray
    nodes: np.ndarray
    kernel: KernelSpec
    lam: float
    scaler: CovariateScaler
    family: ExpFamilySpec

    def evaluate(self, points: np.ndarray, scaled: bool = False) -> np.ndarray:
        z = as_points(points) if scaled else self.scaler.transform(points)
        return null_design(z, self.kernel) @ self.d + cross_gram(z, self.nodes, self.kernel) @ self.c

    def mean(self, points: np.ndarray, scaled: bool = False) -> np.ndarray:
        return self.family.first(self.evaluate(points, scaled=scaled))

    def penalty(self) -> float:
        """J(f) = c' K c."""
        return float(self.c @ gram(self.nodes, self.kernel) @ self.c)

    def to_dict(self) -> dict:
        return {
            "d": self.d.tolist(),
            "c": self.c.tolist(),
            "nodes": self.nodes.tolist(),
            "kernel": self.kernel.to_dict(),
            "lambda": self.lam,
            "scaler": self.scaler.to_dict(),
            "family": self.family.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        nodes = np.asarray(data["nodes"], dtype=float)
        return cls(
            d=np.asarray(data["d"], dtype=float),
            c=np.asarray(data["c"], dtype=float),
            nodes=nodes.reshape(len(nodes), -1),
            kernel=kernel_from_dict(data["kernel"]),
            lam=float(data["lambda"]),
            scaler=CovariateScaler.from_dict(data["scaler"]),
            family=ExpFamilySpec.from_dict(data["family"]),
        )


@dataclass
class InfluenceBlocks:
    """Influence quantities at a converged fit.

    ``B`` and ``D`` are the per-subject blocks of the derivative of the
    score in y and in f; ``H`` is the full Jacobian of fitted node values
    with respect to per-node responses.
    """

    W: np.ndarray
    B: list[np.ndarray]
    D: list[np.ndarray]
    H: np.ndarray
    sizes: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def h_block(self, i: int) -> np.ndarray:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return self.H[lo:hi, lo:hi]

    def w_block(self, i: int) -> np.ndarray:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return self.W[lo:hi]

    def g_block(self, i: int) -> np.ndarray:
        """G_ii = I - H_ii W_i."""
        h = self.h_block(i)
        return np.eye(len(h)) - h * self.w_block(i)[None, :]

    @property
    def h_blocks(self) -> list[np.ndarray]:
        return [self.h_block(i) for i in range(len(self.sizes))]

    @property
    def g_blocks(self) -> list[np.ndarray]:
        return [self.g_block(i) for i in range(len(self.sizes))]


@dataclass
class NuisanceState:
    """Current nuisance parameters: error scale and/or covariate-model parameters."""

    error_scale: np.ndarray | None = None
    covariate: CovariateParams | None = None

    def to_dict(self) -> dict:
        data: dict[str, Any] = {}
        if self.error_scale is not None:
            data["error_scale"] = np.asarray(self.error_scale).tolist()
        if self.covariate is not None:
            data["covariate_model"] = self.covariate.to_dict()
        return data


@dataclass
class EMIteration:
    """One EM step: objective before and after, under the rules in force."""

    iteration: int
    objective_before: float
    objective: float
    max_change: float
    objective_new_rules: float | None = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "objective_before": self.objective_before,
            "objective": self.objective,
            "max_change": self.max_change,
            "objective_new_rules": self.objective_new_rules,
        }


@dataclass
class FitResult:
    """Converged QPLE fit with everything needed to refit or tune."""

    model: RepresenterModel
    rules: list[QuadratureRule]
    y: np.ndarray
    y_nodes: np.ndarray
    final_weights: np.ndarray
    coefficients: np.ndarray
    nuisance: NuisanceState
    em_trace: list[EMIteration]
    converged: bool
    n_scale: int
    warnings: list[str] = field(default_factory=list)
    extras: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def stacked(self) -> StackedRules:
        if "stacked" not in self.extras:
            self.extras["stacked"] = StackedRules(self.rules)
        return self.extras["stacked"]

    @property
    def family(self) -> ExpFamilySpec:
        return self.model.family

    @property
    def lam(self) -> float:
        return self.model.lam

    @property
    def n(self) -> int:
        return len(self.rules)

    @property
    def fitted(self) -> np.ndarray:
        """f at the (scaled) nodes."""
        return self.model.evaluate(self.model.nodes, scaled=True)

    @property
    def theta(self) -> dict:
        return self.nuisance.to_dict()

    def weights_for(self, i: int) -> np.ndarray:
        return self.final_weights[self.stacked.block(i)]

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "theta": self.theta,
            "converged": self.converged,
            "em_trace": [step.to_dict() for step in self.em_trace],
            "rules": [rule.to_dict() for rule in self.rules],
            "final_weights": self.final_weights.tolist(),
            "warnings": list(self.warnings),
        }
