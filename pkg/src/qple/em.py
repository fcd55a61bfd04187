"""QPLE EM drivers.

The E-step turns the current fit into per-node weights
w_ij proportional to pi_ij exp(y_i f(z_ij) - b(f(z_ij))); the M-step is
one weighted penalized likelihood solve. Fits with an unknown error scale
or covariate model add a nuisance M-step and rebuild the rules from the
updated nuisance values before the next E-step.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import (
    DEFAULT_NODES_PER_DIM,
    EM_F_TOL,
    EM_MAX_ITER,
    EM_MONOTONE_SLACK,
    EM_THETA_TOL,
    EM_TOL,
    ENVELOPE_INFLATION,
    REFIT_EM_TOL,
    REFIT_F_TOL,
    REFIT_MAX_ITER,
    SCALER_MARGIN,
)
from .covariates import (
    NormalChainModel,
    mean_rule,
    rule_for_subject,
    update_theta_measurement_error,
    update_theta_missing,
)
from .exceptions import ContractError
from .expfam import ExpFamilySpec
from .kernels import CovariateScaler, KernelSpec
from .models import (
    Dataset,
    EMIteration,
    ErrorModel,
    ExactCovariate,
    FitResult,
    NoisyCovariate,
    NuisanceState,
    PartiallyMissingCovariate,
    RepresenterModel,
    StackedRules,
)
from .quadrature import QuadratureMethod, QuadratureRule
from .solver import (
    RepresenterBasis,
    SolverConfig,
    WeightedObjective,
    check_null_space,
    fit_weighted,
    minimize_weighted,
)
from .utils import segment_logsumexp, segment_softmax

logger = logging.getLogger(__name__)


@dataclass
class QPLEConfig:
    """Settings for one QPLE fit."""

    nodes_per_dim: int = DEFAULT_NODES_PER_DIM
    method: QuadratureMethod = QuadratureMethod.GAUSS
    em_tol: float = EM_TOL
    f_tol: float = EM_F_TOL
    theta_tol: float = EM_THETA_TOL
    max_iter: int = EM_MAX_ITER
    check_null_space: bool = True
    domain: tuple[np.ndarray, np.ndarray] | None = None
    scaler_margin: float = SCALER_MARGIN
    envelope_inflation: float = ENVELOPE_INFLATION
    solver: SolverConfig = field(default_factory=SolverConfig)

    def for_refits(self) -> "QPLEConfig":
        """Tighter settings for perturbed and leave-one-out refits."""
        return replace(
            self,
            em_tol=min(self.em_tol, REFIT_EM_TOL),
            f_tol=min(self.f_tol, REFIT_F_TOL),
            max_iter=max(self.max_iter, REFIT_MAX_ITER),
            check_null_space=False,
        )


def estep_weights(
    y: float | np.ndarray, f: np.ndarray, pi: np.ndarray, family: ExpFamilySpec
) -> np.ndarray:
    """Posterior node probabilities for one subject, via log-sum-exp."""
    f = np.asarray(f, dtype=float)
    pi = np.asarray(pi, dtype=float)
    logits = np.log(pi) + family.canonical_loglik(np.broadcast_to(y, f.shape), f)
    weights = np.exp(logits - np.logaddexp.reduce(logits))
    assert np.all(np.isfinite(weights)) and weights.sum() > 0
    return weights


def node_weights(
    y_nodes: np.ndarray, f: np.ndarray, stacked: StackedRules, family: ExpFamilySpec
) -> np.ndarray:
    """E-step for all subjects at once."""
    logits = np.log(stacked.pi) + family.canonical_loglik(y_nodes, f)
    return segment_softmax(logits, stacked.offsets)


def observed_loss(
    y_nodes: np.ndarray, f: np.ndarray, stacked: StackedRules, family: ExpFamilySpec, n_scale: int
) -> float:
    """-(1/n) sum_i log sum_j pi_ij exp(y f - b(f)), without c(y)."""
    logits = np.log(stacked.pi) + family.canonical_loglik(y_nodes, f)
    return float(-segment_logsumexp(logits, stacked.offsets).sum() / n_scale)


@dataclass
class _FixedRuleProblem:
    """Data of an EM run whose rules do not change."""

    y_nodes: np.ndarray
    stacked: StackedRules
    basis: RepresenterBasis
    lam: float
    family: ExpFamilySpec
    n_scale: int

    def objective(self, theta: np.ndarray) -> float:
        f = self.basis.fitted(theta)
        penalty = 0.5 * self.lam * theta @ self.basis.penalty @ theta
        return observed_loss(self.y_nodes, f, self.stacked, self.family, self.n_scale) + penalty

    def weights(self, theta: np.ndarray) -> np.ndarray:
        return node_weights(self.y_nodes, self.basis.fitted(theta), self.stacked, self.family)

    def m_step(self, theta: np.ndarray, weights: np.ndarray, config: SolverConfig) -> np.ndarray:
        objective = WeightedObjective(
            self.basis, self.y_nodes, weights, self.lam, self.family, self.n_scale
        )
        return minimize_weighted(objective, theta, config).theta


@dataclass
class _EMOutcome:
    theta: np.ndarray
    weights: np.ndarray
    trace: list[EMIteration]
    converged: bool


def _run_fixed_rules(
    problem: _FixedRuleProblem, theta0: np.ndarray, config: QPLEConfig, first_iteration: int = 1
) -> _EMOutcome:
    """Alternate E and M steps on fixed rules until the objective settles."""
    theta = np.asarray(theta0, dtype=float)
    value = problem.objective(theta)
    single = bool(np.all(problem.stacked.sizes == 1))
    trace: list[EMIteration] = []
    converged = False
    for iteration in range(first_iteration, first_iteration + config.max_iter):
        weights = problem.weights(theta)
        new_theta = problem.m_step(theta, weights, config.solver)
        new_value = problem.objective(new_theta)
        change = float(np.max(np.abs(problem.basis.fitted(new_theta) - problem.basis.fitted(theta))))
        trace.append(EMIteration(iteration, value, new_value, change))
        logger.debug("EM iteration %d: objective %.12g, max change %.3g", iteration, new_value, change)
        if new_value > value + EM_MONOTONE_SLACK:
            logger.warning(
                "EM objective increased at iteration %d by %.3g", iteration, new_value - value
            )
        settled = abs(value - new_value) <= config.em_tol * max(abs(value), 1e-300)
        theta, value = new_theta, new_value
        if single or (settled and change <= config.f_tol):
            converged = True
            break
    return _EMOutcome(theta, problem.weights(theta), trace, converged)


def initial_nuisance(dataset: Dataset, model: NormalChainModel | None = None) -> NuisanceState:
    """Starting nuisance values: user-given error scale, covariate-model moments."""
    state = NuisanceState()
    error_model = _shared_error_model(dataset)
    if error_model is not None:
        state.error_scale = error_model.scale.copy()
    chain = model or _shared_covariate_model(dataset)
    if chain is not None:
        if chain.params is not None:
            state.covariate = chain.params
        else:
            complete = [obs.x for obs in dataset.observations if isinstance(obs, ExactCovariate)]
            params, warnings = chain.initialize(np.array(complete))
            dataset.warnings.extend(warnings)
            state.covariate = params
    return state


def _shared_error_model(dataset: Dataset) -> ErrorModel | None:
    models = [obs.error_model for obs in dataset.observations if isinstance(obs, NoisyCovariate)]
    if not models:
        return None
    first = models[0]
    for other in models[1:]:
        if other is not first and (
            other.kind != first.kind
            or other.known != first.known
            or not np.array_equal(other.scale, first.scale)
        ):
            raise ContractError("Noisy subjects must share one error model")
    return first


def _shared_covariate_model(dataset: Dataset) -> NormalChainModel | None:
    models = [obs.model for obs in dataset.observations if isinstance(obs, PartiallyMissingCovariate)]
    if not models:
        return None
    if any(other is not models[0] for other in models[1:]):
        raise ContractError("Partially missing subjects must share one covariate model")
    return models[0]


def build_rules(
    dataset: Dataset, nuisance: NuisanceState, config: QPLEConfig, inflation: float = 1.0
) -> list[QuadratureRule]:
    return [
        rule_for_subject(obs, nuisance, config.nodes_per_dim, config.method, subject=i, inflation=inflation)
        for i, obs in enumerate(dataset.observations)
    ]


def fit_scaler(dataset: Dataset, nuisance: NuisanceState, config: QPLEConfig) -> CovariateScaler:
    """Covariate map covering every node the fit may visit."""
    envelope = build_rules(dataset, nuisance, config, inflation=config.envelope_inflation)
    rules = envelope + build_rules(dataset, nuisance, config)
    points = np.vstack([rule.nodes for rule in rules])
    return CovariateScaler.fit(points, config.scaler_margin, config.domain)


def naive_fit(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig | None = None,
    nuisance: NuisanceState | None = None,
    scaler: CovariateScaler | None = None,
) -> RepresenterModel:
    """Classical fit with each subject collapsed to the mean of its covariate law."""
    config = config or QPLEConfig()
    nuisance = nuisance or initial_nuisance(dataset)
    rules = [mean_rule(obs, nuisance) for obs in dataset.observations]
    return fit_weighted(
        dataset.y,
        rules,
        np.ones(len(rules)),
        lam,
        dataset.kernel,
        dataset.family,
        scaler=scaler,
        config=config.solver,
    )


def _start_theta(
    basis: RepresenterBasis, stacked: StackedRules, start: RepresenterModel
) -> np.ndarray:
    return basis.theta_from_values(start.evaluate(stacked.nodes))


def _result(
    problem: _FixedRuleProblem,
    rules: list[QuadratureRule],
    y: np.ndarray,
    outcome: _EMOutcome,
    nuisance: NuisanceState,
    trace: list[EMIteration],
    converged: bool,
    warnings: list[str],
    scaler: CovariateScaler,
    config: QPLEConfig,
) -> FitResult:
    model = problem.basis.model(outcome.theta, problem.lam, scaler, problem.family)
    if not converged:
        message = f"EM did not converge in {config.max_iter} iterations at lambda={problem.lam:.4g}"
        logger.warning(message)
        warnings.append(message)
    return FitResult(
        model=model,
        rules=rules,
        y=np.asarray(y, dtype=float).copy(),
        y_nodes=problem.y_nodes.copy(),
        final_weights=outcome.weights,
        coefficients=outcome.theta,
        nuisance=nuisance,
        em_trace=trace,
        converged=converged,
        n_scale=problem.n_scale,
        warnings=warnings,
        extras={"basis": problem.basis, "stacked": problem.stacked, "config": config},
    )


def fit_fixed_rules(
    y: np.ndarray,
    rules: list[QuadratureRule],
    lam: float,
    family: ExpFamilySpec,
    kernel: KernelSpec,
    scaler: CovariateScaler,
    config: QPLEConfig,
    start: RepresenterModel | np.ndarray | None = None,
    *,
    y_nodes: np.ndarray | None = None,
    n_scale: int | None = None,
    nuisance: NuisanceState | None = None,
    basis: RepresenterBasis | None = None,
) -> FitResult:
    """EM on a fixed set of rules.

    Args:
        y: Responses per subject
        rules: Per-subject rules in raw covariate units
        lam: Smoothing parameter
        family: Response family
        kernel: Reproducing kernel
        scaler: Covariate map defining the unit cube
        config: EM settings
        start: Model or per-node values to start from; zero function otherwise
        y_nodes: Per-node responses overriding the expansion of ``y``
        n_scale: Divisor of the likelihood; defaults to the number of subjects
        nuisance: Nuisance values recorded on the result
        basis: Prebuilt basis for exactly these rules
    """
    stacked = StackedRules(rules)
    basis = basis or RepresenterBasis(scaler.transform(stacked.nodes), kernel, config.solver.jitter)
    problem = _FixedRuleProblem(
        y_nodes=stacked.expand(y) if y_nodes is None else np.asarray(y_nodes, dtype=float),
        stacked=stacked,
        basis=basis,
        lam=float(lam),
        family=family,
        n_scale=n_scale or stacked.n,
    )
    if isinstance(start, RepresenterModel):
        theta0 = _start_theta(basis, stacked, start)
    elif start is not None:
        theta0 = basis.theta_from_values(np.asarray(start, dtype=float))
    else:
        theta0 = np.zeros(basis.size)
    outcome = _run_fixed_rules(problem, theta0, config)
    return _result(
        problem, rules, y, outcome, nuisance or NuisanceState(), outcome.trace,
        outcome.converged, [], scaler, config,
    )


def qple_fit(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig | None = None,
    warm_start: FitResult | None = None,
) -> FitResult:
    """QPLE fit with rules held fixed at the current nuisance values.

    Raises:
        NullSpaceIdentifiabilityError: If the null-space model has no finite
            maximizer and the check is enabled.
    """
    config = config or QPLEConfig()
    if dataset.n < 1:
        raise ContractError("At least one subject is required")
    nuisance = warm_start.nuisance if warm_start is not None else initial_nuisance(dataset)
    scaler = warm_start.model.scaler if warm_start is not None else fit_scaler(dataset, nuisance, config)
    rules = build_rules(dataset, nuisance, config)
    if warm_start is None and config.check_null_space:
        means = np.array([rule.mean() for rule in rules])
        check_null_space(dataset.y, scaler.transform(means), dataset.kernel, dataset.family)
    start = warm_start.model if warm_start is not None else naive_fit(dataset, lam, config, nuisance, scaler)
    result = fit_fixed_rules(
        dataset.y, rules, lam, dataset.family, dataset.kernel, scaler, config, start, nuisance=nuisance
    )
    result.warnings[:0] = list(dataset.warnings)
    logger.info(
        "QPLE fit at lambda=%.4g: %d EM iterations, objective %.8g",
        lam,
        len(result.em_trace),
        result.em_trace[-1].objective if result.em_trace else float("nan"),
    )
    return result


def _nuisance_step(
    dataset: Dataset,
    rules: list[QuadratureRule],
    weights: list[np.ndarray],
    nuisance: NuisanceState,
    error_model: ErrorModel | None,
    chain: NormalChainModel | None,
    warnings: list[str],
) -> tuple[NuisanceState, float, bool]:
    """M-step for unknown nuisance components; returns (state, relative change, degenerate)."""
    updated = NuisanceState(nuisance.error_scale, nuisance.covariate)
    delta = 0.0
    degenerate = False
    if error_model is not None and not error_model.known:
        noisy = [i for i, obs in enumerate(dataset.observations) if isinstance(obs, NoisyCovariate)]
        shifts = [dataset.observations[i].x_err[None, :] - rules[i].nodes for i in noisy]
        update = update_theta_measurement_error([weights[i] for i in noisy], shifts, error_model)
        old = np.asarray(nuisance.error_scale)
        delta = max(delta, float(np.max(np.abs(update.scale - old) / np.maximum(old, 1e-300))))
        updated.error_scale = update.scale
        degenerate = update.degenerate
    if chain is not None:
        update = update_theta_missing(weights, [rule.nodes for rule in rules], chain)
        warnings.extend(w for w in update.warnings if w not in warnings)
        old_cov = nuisance.covariate
        scale = 1.0 + max(np.max(np.abs(old_cov.cov)), np.max(np.abs(old_cov.coef)))
        delta = max(
            delta,
            float(np.max(np.abs(update.params.cov - old_cov.cov))) / scale,
            float(np.max(np.abs(update.params.coef - old_cov.coef))) / scale,
        )
        updated.covariate = update.params
    return updated, delta, degenerate


def _fit_with_nuisance(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig,
    warm_start: FitResult | None,
    error_model: ErrorModel | None,
    chain: NormalChainModel | None,
) -> FitResult:
    """EM with rules rebuilt from the nuisance estimate at every iteration."""
    nuisance = warm_start.nuisance if warm_start is not None else initial_nuisance(dataset, chain)
    scaler = warm_start.model.scaler if warm_start is not None else fit_scaler(dataset, nuisance, config)
    if warm_start is None and config.check_null_space:
        means = np.array([rule.mean() for rule in build_rules(dataset, nuisance, config)])
        check_null_space(dataset.y, scaler.transform(means), dataset.kernel, dataset.family)
    if warm_start is not None:
        current = warm_start.model
    else:
        current = naive_fit(dataset, lam, config, nuisance, scaler)
    trace: list[EMIteration] = []
    warnings = list(dataset.warnings)
    converged = False
    previous_value: float | None = None
    for iteration in range(1, config.max_iter + 1):
        rules = build_rules(dataset, nuisance, config)
        stacked = StackedRules(rules)
        basis = RepresenterBasis(scaler.transform(stacked.nodes), dataset.kernel, config.solver.jitter)
        problem = _FixedRuleProblem(stacked.expand(dataset.y), stacked, basis, lam, dataset.family, stacked.n)
        theta = _start_theta(basis, stacked, current)
        value_before = problem.objective(theta)
        if trace:
            trace[-1].objective_new_rules = value_before
        weights = problem.weights(theta)
        new_theta = problem.m_step(theta, weights, config.solver)
        value = problem.objective(new_theta)
        change = float(np.max(np.abs(basis.fitted(new_theta) - basis.fitted(theta))))
        trace.append(EMIteration(iteration, value_before, value, change))
        if value > value_before + EM_MONOTONE_SLACK:
            logger.warning("EM objective increased under fixed rules at iteration %d", iteration)
        current = basis.model(new_theta, lam, scaler, dataset.family)
        nuisance, delta, degenerate = _nuisance_step(
            dataset, rules, stacked.split(weights), nuisance, error_model, chain, warnings
        )
        logger.debug(
            "EM iteration %d: objective %.12g, nuisance change %.3g", iteration, value, delta
        )
        if degenerate:
            message = "error scale estimate collapsed to zero; stopping EM"
            logger.warning(message)
            warnings.append(message)
            break
        settled = previous_value is not None and abs(previous_value - value) <= config.em_tol * max(
            abs(previous_value), 1e-300
        )
        previous_value = value
        if settled and delta <= config.theta_tol and change <= config.f_tol:
            converged = True
            break

    # polish f on the final rules so the result is a fixed-rule stationary point
    rules = build_rules(dataset, nuisance, config)
    final = fit_fixed_rules(
        dataset.y, rules, lam, dataset.family, dataset.kernel, scaler, config, current, nuisance=nuisance
    )
    final.em_trace = trace + [
        replace(step, iteration=step.iteration + len(trace)) for step in final.em_trace
    ]
    final.converged = converged and final.converged
    final.warnings = warnings + final.warnings
    if not converged:
        message = f"EM did not converge in {config.max_iter} iterations at lambda={lam:.4g}"
        if message not in final.warnings:
            final.warnings.append(message)
    return final


def qple_fit_measurement_error(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig | None = None,
    warm_start: FitResult | None = None,
) -> FitResult:
    """QPLE with noisy covariates; the shared error scale is estimated unless known.

    Raises:
        ContractError: If the dataset has no noisy subjects.
    """
    config = config or QPLEConfig()
    error_model = _shared_error_model(dataset)
    if error_model is None:
        raise ContractError("Error scale is unidentifiable without noisy subjects")
    if error_model.known:
        return qple_fit(dataset, lam, config, warm_start)
    return _fit_with_nuisance(dataset, lam, config, warm_start, error_model, _shared_covariate_model(dataset))


def qple_fit_missing(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig | None = None,
    warm_start: FitResult | None = None,
    model: NormalChainModel | None = None,
) -> FitResult:
    """QPLE with partially missing covariates and an estimated covariate model.

    Args:
        model: Covariate model to estimate when no subject references one
    """
    config = config or QPLEConfig()
    chain = _shared_covariate_model(dataset) or model
    if chain is None:
        raise ContractError("A covariate model is required for missing-data fitting")
    error_model = _shared_error_model(dataset)
    return _fit_with_nuisance(dataset, lam, config, warm_start, error_model, chain)


def fit_dataset(
    dataset: Dataset,
    lam: float,
    config: QPLEConfig | None = None,
    warm_start: FitResult | None = None,
) -> FitResult:
    """Dispatch to the driver matching the dataset's covariate types."""
    error_model = _shared_error_model(dataset)
    if _shared_covariate_model(dataset) is not None:
        return qple_fit_missing(dataset, lam, config, warm_start)
    if error_model is not None and not error_model.known:
        return qple_fit_measurement_error(dataset, lam, config, warm_start)
    return qple_fit(dataset, lam, config, warm_start)
