"""Covariate observation models: resolving subjects to quadrature rules.

Noisy subjects share one error rule per EM iteration; their nodes are the
observed point shifted by the error nodes. Partially missing subjects get
the conditional law of their missing coordinates under a normal-chain
covariate model (continuous block normal with mean linear in always
observed coordinates, binary coordinates logistic given the rest).
"""

import logging
from dataclasses import dataclass, field
from typing import Self

import numpy as np
from scipy.special import expit

from .constants import (
    DEFAULT_NODES_PER_DIM,
    DEGENERATE_SCALE,
    LOGISTIC_COEF_CAP,
    LOGISTIC_IRLS_MAX_ITER,
)
from .exceptions import ContractError, CovariateModelError, RuleConstructionError
from .models import (
    CovariateObservation,
    DiscreteCovariate,
    DistributionalCovariate,
    ErrorKind,
    ErrorModel,
    ExactCovariate,
    NoisyCovariate,
    NuisanceState,
    PartiallyMissingCovariate,
)
from .quadrature import (
    MultivariateNormal,
    QuadratureMethod,
    QuadratureRule,
    UnivariateDistribution,
    multivariate_rule,
    rule_for_distribution,
)

logger = logging.getLogger(__name__)


@dataclass
class CovariateParams:
    """Parameters of a normal-chain covariate model.

    ``coef`` maps [1, fixed coordinates] to the continuous mean,
    ``cov`` is the continuous covariance and ``logit`` holds one row of
    logistic coefficients over [1, fixed, continuous] per binary coordinate.
    """

    coef: np.ndarray
    cov: np.ndarray
    logit: np.ndarray

    def inflated(self, factor: float) -> Self:
        return type(self)(self.coef.copy(), self.cov * factor**2, self.logit.copy())

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "cov": self.cov.tolist(), "logit": self.logit.tolist()}


@dataclass
class NormalChainModel:
    """Covariate model p(x | theta) for missing-at-random coordinates."""

    dim: int
    fixed: tuple[int, ...] = ()
    binary: tuple[int, ...] = ()
    params: CovariateParams | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.fixed = tuple(int(j) for j in self.fixed)
        self.binary = tuple(int(j) for j in self.binary)
        if set(self.fixed) & set(self.binary):
            raise ContractError("A coordinate cannot be both fixed and binary")
        if any(j < 0 or j >= self.dim for j in self.fixed + self.binary):
            raise ContractError(f"Covariate model coordinates must lie in 0..{self.dim - 1}")

    @property
    def continuous(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.dim) if j not in self.fixed and j not in self.binary)

    def _fixed_design(self, points: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(len(points))] + [points[:, j] for j in self.fixed])

    def _logit_design(self, points: np.ndarray) -> np.ndarray:
        return np.column_stack(
            [self._fixed_design(points)] + [points[:, j] for j in self.continuous]
        )

    def current(self, params: CovariateParams | None = None) -> CovariateParams:
        params = params if params is not None else self.params
        if params is None:
            raise ContractError("Covariate model has no parameters; initialize it first")
        return params

    def binary_prob(self, points: np.ndarray, params: CovariateParams) -> np.ndarray:
        """P(x_b = 1 | fixed, continuous), one column per binary coordinate."""
        if not self.binary:
            return np.zeros((len(points), 0))
        return expit(self._logit_design(points) @ params.logit.T)

    def conditional_rule(
        self,
        x: np.ndarray,
        params: CovariateParams | None = None,
        nodes_per_dim: int = DEFAULT_NODES_PER_DIM,
        method: QuadratureMethod = QuadratureMethod.GAUSS,
        subject: int | None = None,
    ) -> QuadratureRule:
        """Rule for the missing coordinates of ``x`` given the observed ones.

        Raises:
            CovariateModelError: If a fixed coordinate is missing or the
                conditional covariance is singular.
        """
        params = self.current(params)
        x = np.asarray(x, dtype=float)
        missing = np.isnan(x)
        if any(missing[j] for j in self.fixed):
            raise CovariateModelError("always-observed coordinate is missing", subject=subject)
        cont = self.continuous
        cont_missing = [k for k, j in enumerate(cont) if missing[j]]
        cont_observed = [k for k, j in enumerate(cont) if not missing[j]]

        nodes = x.reshape(1, -1).copy()
        weights = np.ones(1)
        if cont_missing:
            mean = params.coef @ self._fixed_design(x.reshape(1, -1))[0]
            cov = params.cov
            cond_mean = mean[cont_missing]
            cond_cov = cov[np.ix_(cont_missing, cont_missing)]
            if cont_observed:
                s_oo = cov[np.ix_(cont_observed, cont_observed)]
                s_mo = cov[np.ix_(cont_missing, cont_observed)]
                observed_values = np.array([x[cont[k]] for k in cont_observed])
                try:
                    gain = np.linalg.solve(s_oo, s_mo.T).T
                except np.linalg.LinAlgError as exc:
                    raise CovariateModelError("singular observed covariance block", subject=subject) from exc
                cond_mean = cond_mean + gain @ (observed_values - mean[cont_observed])
                cond_cov = cond_cov - gain @ s_mo.T
            try:
                rule = multivariate_rule(
                    MultivariateNormal(cond_mean, (cond_cov + cond_cov.T) / 2.0),
                    [nodes_per_dim] * len(cont_missing),
                    method,
                )
            except RuleConstructionError as exc:
                raise CovariateModelError(str(exc), subject=subject) from exc
            nodes = np.repeat(nodes, rule.m, axis=0)
            for col, k in enumerate(cont_missing):
                nodes[:, cont[k]] = rule.nodes[:, col]
            weights = rule.weights.copy()

        for b, j in enumerate(self.binary):
            # NaN in other binaries does not enter the logistic design
            prob = expit(self._logit_design(np.nan_to_num(nodes)) @ params.logit[b])
            if missing[j]:
                zeros, ones = nodes.copy(), nodes.copy()
                zeros[:, j], ones[:, j] = 0.0, 1.0
                nodes = np.vstack([zeros, ones])
                weights = np.concatenate([weights * (1.0 - prob), weights * prob])
            else:
                weights = weights * (prob if x[j] == 1.0 else 1.0 - prob)
        keep = weights > 0
        if not np.any(keep):
            raise CovariateModelError("observed binary coordinates have zero probability", subject=subject)
        return QuadratureRule(nodes[keep], weights[keep])

    def mean_point(self, x: np.ndarray, params: CovariateParams | None = None) -> np.ndarray:
        """Missing coordinates filled by conditional means."""
        rule = self.conditional_rule(x, params, nodes_per_dim=1)
        return rule.mean()

    def log_density(self, points: np.ndarray, params: CovariateParams | None = None) -> np.ndarray:
        """log p(x | theta) of complete points, conditional on fixed coordinates."""
        params = self.current(params)
        points = np.asarray(points, dtype=float)
        out = np.zeros(len(points))
        cont = list(self.continuous)
        if cont:
            resid = points[:, cont] - self._fixed_design(points) @ params.coef.T
            chol = np.linalg.cholesky(params.cov)
            solved = np.linalg.solve(chol, resid.T)
            log_det = np.sum(np.log(np.diag(chol)))
            out += -0.5 * np.sum(solved**2, axis=0) - log_det - 0.5 * len(cont) * np.log(2 * np.pi)
        if self.binary:
            prob = self.binary_prob(points, params)
            values = points[:, list(self.binary)]
            with np.errstate(divide="ignore"):
                out += np.sum(values * np.log(prob) + (1.0 - values) * np.log1p(-prob), axis=1)
        return out

    def fit(self, points: np.ndarray, weights: np.ndarray) -> tuple[CovariateParams, list[str]]:
        """Weighted maximum likelihood over weighted complete points.

        Raises:
            CovariateModelError: If the mean design or the covariance is singular.
        """
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        warnings: list[str] = []
        design = self._fixed_design(points)
        cont = list(self.continuous)
        gram = design.T @ (design * weights[:, None])
        try:
            coef = np.linalg.solve(gram, design.T @ (points[:, cont] * weights[:, None])).T
        except np.linalg.LinAlgError as exc:
            raise CovariateModelError("singular design for the continuous mean") from exc
        resid = points[:, cont] - design @ coef.T
        cov = (resid * weights[:, None]).T @ resid / weights.sum()
        if cont:
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise CovariateModelError("covariance of the continuous block is singular") from exc

        logit_rows = []
        if self.binary:
            logit_design = self._logit_design(points)
            for j in self.binary:
                beta, capped = _weighted_logistic(logit_design, points[:, j], weights)
                if capped:
                    message = (
                        f"logistic model for coordinate {j + 1} is separable; "
                        f"coefficients capped at {LOGISTIC_COEF_CAP}"
                    )
                    logger.warning(message)
                    warnings.append(message)
                logit_rows.append(beta)
        width = 1 + len(self.fixed) + len(cont)
        logit = np.array(logit_rows) if logit_rows else np.zeros((0, width))
        return CovariateParams(coef, cov, logit), warnings

    def initialize(self, complete_points: np.ndarray) -> tuple[CovariateParams, list[str]]:
        """Moment estimates from complete cases."""
        complete_points = np.asarray(complete_points, dtype=float)
        if len(complete_points) <= self.dim:
            raise CovariateModelError(
                f"need more than {self.dim} complete cases to initialize, got {len(complete_points)}"
            )
        return self.fit(complete_points, np.ones(len(complete_points)))


def _weighted_logistic(
    design: np.ndarray, response: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, bool]:
    """Weighted IRLS for a logistic regression; returns (coef, capped)."""
    beta = np.zeros(design.shape[1])
    capped = False
    for _ in range(LOGISTIC_IRLS_MAX_ITER):
        prob = expit(design @ beta)
        info = design.T @ (design * (weights * prob * (1.0 - prob))[:, None])
        score = design.T @ (weights * (response - prob))
        step = np.linalg.lstsq(info + 1e-12 * np.eye(len(beta)), score, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > LOGISTIC_COEF_CAP:
            beta = np.clip(beta, -LOGISTIC_COEF_CAP, LOGISTIC_COEF_CAP)
            capped = True
            break
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta, capped


def rule_for_subject(
    obs: CovariateObservation,
    nuisance: NuisanceState | None = None,
    nodes_per_dim: int = DEFAULT_NODES_PER_DIM,
    method: QuadratureMethod = QuadratureMethod.GAUSS,
    subject: int | None = None,
    inflation: float = 1.0,
) -> QuadratureRule:
    """Resolve one subject's covariate observation to a quadrature rule.

    Args:
        obs: The covariate observation
        nuisance: Current error scale / covariate-model parameters; model
            defaults are used for components that are None
        nodes_per_dim: Nodes per continuous coordinate
        method: gauss or grid rules for continuous laws
        subject: Subject index used in error messages
        inflation: Scale factor on nuisance spreads (envelope rules)
    """
    nuisance = nuisance or NuisanceState()
    match obs:
        case ExactCovariate(x=x):
            return QuadratureRule.point(x)
        case DiscreteCovariate(values=values, probs=probs):
            return QuadratureRule(values, probs).merged()
        case DistributionalCovariate(law=law):
            if isinstance(law, UnivariateDistribution):
                return rule_for_distribution(law, nodes_per_dim, method)
            return multivariate_rule(law, [nodes_per_dim] * law.dim, method)
        case NoisyCovariate(x_err=x_err, error_model=error_model):
            scale = nuisance.error_scale if nuisance.error_scale is not None else error_model.scale
            error_rule = error_model.rule(nodes_per_dim, method, np.asarray(scale) * inflation)
            return QuadratureRule(x_err[None, :] - error_rule.nodes, error_rule.weights)
        case PartiallyMissingCovariate(x=x, model=model):
            params = model.current(nuisance.covariate)
            if inflation != 1.0:
                params = params.inflated(inflation)
            return model.conditional_rule(x, params, nodes_per_dim, method, subject=subject)
    raise ContractError(f"Unsupported covariate observation {type(obs).__name__}")


def mean_rule(obs: CovariateObservation, nuisance: NuisanceState | None = None) -> QuadratureRule:
    """One-node rule at the mean of the subject's covariate law (naive start)."""
    if isinstance(obs, NoisyCovariate):
        return QuadratureRule.point(obs.x_err)
    if isinstance(obs, PartiallyMissingCovariate):
        params = obs.model.current(nuisance.covariate if nuisance else None)
        return QuadratureRule.point(obs.model.mean_point(obs.x, params))
    return QuadratureRule.point(rule_for_subject(obs, nuisance, nodes_per_dim=1).mean())


@dataclass
class ErrorScaleUpdate:
    """Result of the error-scale M-step."""

    scale: np.ndarray
    degenerate: bool


def update_theta_measurement_error(
    weights: list[np.ndarray], node_sets: list[np.ndarray], error_model: ErrorModel
) -> ErrorScaleUpdate:
    """Weighted M-step for the shared error scale.

    Args:
        weights: Final E-step weights per noisy subject
        node_sets: Error nodes u_j (m, d) per noisy subject
        error_model: Error family to update

    Returns:
        Updated per-coordinate scale; sigma^2 is the weighted second moment
        averaged over noisy subjects, delta^2 is three times it.
    """
    if not weights:
        raise ContractError("No noisy subjects to estimate the error scale from")
    second = np.zeros(error_model.dim)
    for w, z in zip(weights, node_sets):
        second += np.asarray(w) @ (np.asarray(z).reshape(len(w), -1) ** 2)
    second /= len(weights)
    if error_model.kind == ErrorKind.UNIFORM:
        second = 3.0 * second
    scale = np.sqrt(second)
    degenerate = bool(np.any(scale <= DEGENERATE_SCALE))
    if degenerate:
        logger.warning("Error scale collapsed to %s", scale)
    return ErrorScaleUpdate(scale=scale, degenerate=degenerate)


@dataclass
class CovariateUpdate:
    """Result of the covariate-model M-step."""

    params: CovariateParams
    warnings: list[str]


def update_theta_missing(
    weights: list[np.ndarray], node_sets: list[np.ndarray], model: NormalChainModel
) -> CovariateUpdate:
    """Weighted MLE of the covariate model over all subjects' weighted nodes."""
    points = np.vstack([np.asarray(z, dtype=float) for z in node_sets])
    flat = np.concatenate([np.asarray(w, dtype=float) for w in weights])
    params, warnings = model.fit(points, flat)
    return CovariateUpdate(params=params, warnings=warnings)
