"""Smoothing-parameter criteria and grid search.

All criteria work from a converged :class:`FitResult`; a grid search fits
once per lambda and evaluates every requested criterion on that fit.
Randomized quadratic forms are normalized by the perturbation variance.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .constants import CRITERIA, RANGACV_REPLICATES, SIGMA_PERTURB_FRACTION
from .em import QPLEConfig, estep_weights, fit_dataset, fit_fixed_rules, observed_loss
from .exceptions import ContractError, CriterionError, QPLEError
from .models import Dataset, ExactCovariate, FitResult, InfluenceBlocks
from .solver import RepresenterBasis, influence_blocks
from .utils import argmin_prefer_larger, segment_sum, spawn_rng

logger = logging.getLogger(__name__)

Truth = Callable[[np.ndarray], np.ndarray]


@dataclass
class GeneralizedAverage:
    """Exchangeable (delta, gamma) stand-ins for the diagonal blocks of a matrix.

    delta_i = tr(A) / (n m_i) and gamma_i = (off-diagonal block sum) /
    (n m_i (m_i - 1)), with gamma_i = 0 for single-node subjects.
    """

    delta: np.ndarray
    gamma: np.ndarray
    sizes: np.ndarray

    @classmethod
    def from_sums(cls, trace: float, off_sum: float, sizes: np.ndarray, n: int) -> "GeneralizedAverage":
        sizes = np.asarray(sizes, dtype=int)
        delta = trace / (n * sizes)
        pairs = sizes * (sizes - 1)
        gamma = np.where(pairs > 0, off_sum / (n * np.maximum(pairs, 1)), 0.0)
        return cls(delta, gamma, sizes)

    def matrix(self, i: int) -> np.ndarray:
        m = int(self.sizes[i])
        return (self.delta[i] - self.gamma[i]) * np.eye(m) + self.gamma[i] * np.ones((m, m))

    def inverse(self, i: int) -> np.ndarray:
        """Closed-form inverse of the exchangeable block.

        Raises:
            CriterionError: If the block is singular.
        """
        m = int(self.sizes[i])
        delta, gamma = self.delta[i], self.gamma[i]
        first = delta - gamma
        second = delta + (m - 1) * gamma
        tiny = 1e-14 * max(abs(delta), abs(gamma), 1e-300)
        if abs(first) <= tiny or abs(second) <= tiny:
            raise CriterionError("generalized average", "exchangeable block is singular", subject=i)
        return np.eye(m) / first - gamma / (first * second) * np.ones((m, m))


def generalized_average(blocks: list[np.ndarray], n: int) -> GeneralizedAverage:
    """Generalized average of the diagonal blocks of a matrix with n subjects."""
    sizes = np.array([len(block) for block in blocks], dtype=int)
    trace = float(sum(np.trace(block) for block in blocks))
    off_sum = float(sum(block.sum() - np.trace(block) for block in blocks))
    return GeneralizedAverage.from_sums(trace, off_sum, sizes, n)


def _basis(fit: FitResult) -> RepresenterBasis:
    basis = fit.extras.get("basis")
    if basis is None:
        basis = RepresenterBasis(fit.model.nodes, fit.model.kernel)
        fit.extras["basis"] = basis
    return basis


def _fitted(fit: FitResult) -> np.ndarray:
    return _basis(fit).fitted(fit.coefficients)


def _refit_config(fit: FitResult) -> QPLEConfig:
    return fit.extras.get("config", QPLEConfig()).for_refits()


def obs(fit: FitResult) -> float:
    """Observed-data negative log-likelihood of the fit, without c(y)."""
    stacked = fit.stacked
    return observed_loss(stacked.expand(fit.y), _fitted(fit), stacked, fit.family, fit.n)


def d_weights(fit: FitResult, i: int) -> np.ndarray:
    """d_ij = w_ij [(y_i - mu_ij)(f_ij - sum_k w_ik f_ik) + 1]."""
    w = fit.weights_for(i)
    f = _fitted(fit)[fit.stacked.block(i)]
    mu = fit.family.first(f)
    return w * ((fit.y[i] - mu) * (f - w @ f) + 1.0)


def _trace_term(
    fit: FitResult, h_avg: GeneralizedAverage, g_avg: GeneralizedAverage, criterion: str
) -> float:
    f = _fitted(fit)
    total = 0.0
    for i in range(fit.n):
        block = fit.stacked.block(i)
        residual = fit.y[i] - fit.family.first(f[block])
        try:
            g_inv = g_avg.inverse(i)
        except CriterionError as exc:
            raise CriterionError(criterion, "generalized average of G is singular", subject=i) from exc
        total += fit.y[i] * d_weights(fit, i) @ g_inv @ h_avg.matrix(i) @ residual
    return total / fit.n


def gacv(fit: FitResult, blocks: InfluenceBlocks | None = None) -> float:
    """GACV from exact influence blocks."""
    blocks = blocks or influence_blocks(fit, _basis(fit))
    h_avg = generalized_average(blocks.h_blocks, fit.n)
    g_avg = generalized_average(blocks.g_blocks, fit.n)
    return obs(fit) + _trace_term(fit, h_avg, g_avg, "gacv")


def _perturbed_change(fit: FitResult, delta: np.ndarray, config: QPLEConfig) -> np.ndarray:
    """Change of fitted node values when per-node responses move by delta."""
    f = _fitted(fit)
    refit = fit_fixed_rules(
        fit.y,
        fit.rules,
        fit.lam,
        fit.family,
        fit.model.kernel,
        fit.model.scaler,
        config,
        start=f,
        y_nodes=fit.y_nodes + delta,
        n_scale=fit.n_scale,
        basis=_basis(fit),
    )
    return _fitted(refit) - f


def default_sigma(y: np.ndarray) -> float:
    spread = float(np.std(y))
    return SIGMA_PERTURB_FRACTION * (spread if spread > 0 else 1.0)


@dataclass
class PerturbationSet:
    """Perturbation draws for randomized trace estimates."""

    sigma: float
    eps: np.ndarray
    eps_bar: np.ndarray

    @classmethod
    def draw(
        cls, rng: np.random.Generator, sigma: float, sizes: np.ndarray, offsets: np.ndarray
    ) -> "PerturbationSet":
        eps = rng.normal(0.0, sigma, int(offsets[-1]))
        subject_mean = segment_sum(eps, offsets) / np.sqrt(sizes)
        return cls(sigma, eps, np.repeat(subject_mean, sizes))


def rangacv(
    fit: FitResult,
    replicates: int = RANGACV_REPLICATES,
    sigma_perturb: float | None = None,
    seed: int = 0,
    stream: tuple[int, ...] = (),
) -> float:
    """R-replicated randomized GACV.

    Each replicate refits with responses y + eps and y + eps_bar, starting
    from the current fit, and estimates trace and within-block off-diagonal
    sums of H and G from the changes in fitted values.

    Raises:
        CriterionError: If every replicate fails.
    """
    if replicates < 1:
        raise ContractError("ranGACV needs at least one replicate")
    sigma = sigma_perturb if sigma_perturb is not None else default_sigma(fit.y)
    if not sigma > 0:
        raise ContractError(f"Perturbation scale must be positive, got {sigma}")
    config = _refit_config(fit)
    stacked = fit.stacked
    variance = fit.family.second(_fitted(fit))
    base = obs(fit)
    rng = spawn_rng(seed, *stream)
    values = []
    for r in range(replicates):
        draw = PerturbationSet.draw(rng, sigma, stacked.sizes, stacked.offsets)
        try:
            change = _perturbed_change(fit, draw.eps, config)
            change_bar = _perturbed_change(fit, draw.eps_bar, config)
        except QPLEError as exc:
            message = f"ranGACV replicate {r} dropped: {exc}"
            logger.warning(message)
            fit.warnings.append(message)
            continue
        s2 = sigma**2
        h_eps = draw.eps @ change
        h_bar = draw.eps_bar @ change_bar
        g_eps = draw.eps @ draw.eps - draw.eps @ (variance * change)
        g_bar = draw.eps_bar @ draw.eps_bar - draw.eps_bar @ (variance * change_bar)
        h_avg = GeneralizedAverage.from_sums(h_eps / s2, (h_bar - h_eps) / s2, stacked.sizes, fit.n)
        g_avg = GeneralizedAverage.from_sums(g_eps / s2, (g_bar - g_eps) / s2, stacked.sizes, fit.n)
        try:
            values.append(base + _trace_term(fit, h_avg, g_avg, "rangacv"))
        except CriterionError as exc:
            message = f"ranGACV replicate {r} dropped: {exc}"
            logger.warning(message)
            fit.warnings.append(message)
    if not values:
        raise CriterionError("rangacv", "all perturbed replicates failed")
    return float(np.mean(values))


def exact_loocv(fit: FitResult) -> float:
    """Leave-out-one-subject CV in its quadrature form (n refits).

    Raises:
        ContractError: If there is only one subject.
    """
    n = fit.n
    if n < 2:
        raise ContractError("Leave-one-out CV needs at least two subjects")
    config = _refit_config(fit)
    stacked = fit.stacked
    f = _fitted(fit)
    total = 0.0
    for i in range(n):
        block = stacked.block(i)
        keep = np.ones(stacked.total, dtype=bool)
        keep[block] = False
        others = [k for k in range(n) if k != i]
        loo = fit_fixed_rules(
            fit.y[others],
            [fit.rules[k] for k in others],
            fit.lam,
            fit.family,
            fit.model.kernel,
            fit.model.scaler,
            config,
            start=f[keep],
            y_nodes=fit.y_nodes[keep],
            n_scale=fit.n_scale,
        )
        f_out = loo.model.evaluate(fit.model.nodes[block], scaled=True)
        w_out = estep_weights(fit.y[i], f_out, stacked.pi[block], fit.family)
        total += fit.y[i] * (fit.final_weights[block] @ f[block] - w_out @ f_out)
    return obs(fit) + total / n


def tkl(fit: FitResult, truth: Truth | np.ndarray, true_covariates: np.ndarray) -> float:
    """Mean Kullback-Leibler distance from the true to the fitted response law.

    Args:
        fit: Fitted result
        truth: True natural-parameter function, or its values at the points
        true_covariates: True covariate vectors (raw units)
    """
    points = np.asarray(true_covariates, dtype=float)
    f_hat = fit.model.evaluate(points)
    f_true = np.asarray(truth(points) if callable(truth) else truth, dtype=float).reshape(-1)
    family = fit.family
    kl = family.first(f_true) * (f_true - f_hat) - (family.cumulant(f_true) - family.cumulant(f_hat))
    return float(np.mean(kl))


def true_covariates_of(dataset: Dataset) -> np.ndarray:
    """True covariates for TKL: stored truth, or the exact observations."""
    if dataset.true_covariates is not None:
        return dataset.true_covariates
    if all(isinstance(obs, ExactCovariate) for obs in dataset.observations):
        return np.array([obs.x for obs in dataset.observations])
    raise ContractError("TKL needs true covariates for non-exact subjects")


@dataclass
class TuningConfig:
    """Criterion settings for grid search."""

    criteria: tuple[str, ...] = ("gacv",)
    replicates: int = RANGACV_REPLICATES
    sigma_perturb: float | None = None
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        unknown = [c for c in self.criteria if c not in CRITERIA]
        if unknown:
            raise ContractError(f"Unknown criteria {unknown}; choose from {', '.join(CRITERIA)}")


@dataclass
class CriterionCurves:
    """Criterion values over a lambda grid (ascending)."""

    lambdas: np.ndarray
    values: dict[str, np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def select(self, criterion: str) -> int:
        return argmin_prefer_larger(self.values[criterion])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"lambda": self.lambdas, "log10_lambda": np.log10(self.lambdas)})
        for name, column in self.values.items():
            frame[name] = column
        return frame


def _evaluate_criteria(
    fit: FitResult,
    index: int,
    tuning: TuningConfig,
    truth: Truth | np.ndarray | None,
    points: np.ndarray | None,
    warnings: list[str],
) -> dict[str, float]:
    values = {}
    for criterion in tuning.criteria:
        try:
            if criterion == "gacv":
                values[criterion] = gacv(fit)
            elif criterion == "rangacv":
                values[criterion] = rangacv(
                    fit, tuning.replicates, tuning.sigma_perturb, tuning.seed, stream=(index,)
                )
            elif criterion == "loocv":
                values[criterion] = exact_loocv(fit)
            else:
                values[criterion] = tkl(fit, truth, points)
        except QPLEError as exc:
            message = f"{criterion} skipped at lambda={fit.lam:.4g}: {exc}"
            logger.warning(message)
            warnings.append(message)
            values[criterion] = np.nan
    return values


def _grid_point(
    dataset: Dataset,
    lam: float,
    index: int,
    fit_config: QPLEConfig,
    tuning: TuningConfig,
    truth: Truth | np.ndarray | None,
    points: np.ndarray | None,
    warm_start: FitResult | None = None,
) -> tuple[dict[str, float], list[str], FitResult | None]:
    warnings: list[str] = []
    try:
        fit = fit_dataset(dataset, lam, fit_config, warm_start)
    except QPLEError as exc:
        message = f"fit failed at lambda={lam:.4g}: {exc}"
        logger.warning(message)
        return {c: np.nan for c in tuning.criteria}, [message], None
    warnings.extend(w for w in fit.warnings if w not in dataset.warnings)
    return _evaluate_criteria(fit, index, tuning, truth, points, warnings), warnings, fit


def criterion_curves(
    dataset: Dataset,
    lambdas: np.ndarray,
    tuning: TuningConfig | None = None,
    fit_config: QPLEConfig | None = None,
    truth: Truth | np.ndarray | None = None,
    true_points: np.ndarray | None = None,
) -> CriterionCurves:
    """Fit once per lambda and evaluate every requested criterion.

    Sequential runs sweep from the largest lambda down, warm-starting each
    fit from the previous one; parallel runs fit every point from scratch.
    TKL is averaged over ``true_points`` when given, else over the
    dataset's true covariates.

    Raises:
        ContractError: If TKL is requested without a truth.
    """
    tuning = tuning or TuningConfig()
    fit_config = fit_config or QPLEConfig()
    lambdas = np.sort(np.asarray(lambdas, dtype=float))
    points = None
    if "tkl" in tuning.criteria:
        if truth is None:
            raise ContractError("Criterion 'tkl' requires the true function")
        points = true_covariates_of(dataset) if true_points is None else np.asarray(true_points, dtype=float)

    results: dict[int, dict[str, float]] = {}
    warnings: list[str] = list(dataset.warnings)
    if tuning.jobs == 1:
        warm: FitResult | None = None
        for index in reversed(range(len(lambdas))):
            values, notes, warm = _grid_point(
                dataset, lambdas[index], index, fit_config, tuning, truth, points, warm
            )
            results[index] = values
            warnings.extend(notes)
    else:
        outputs = Parallel(n_jobs=tuning.jobs)(
            delayed(_grid_point)(dataset, lam, index, fit_config, tuning, truth, points)
            for index, lam in enumerate(lambdas)
        )
        for index, (values, notes, _) in enumerate(outputs):
            results[index] = values
            warnings.extend(notes)

    columns = {c: np.array([results[i][c] for i in range(len(lambdas))]) for c in tuning.criteria}
    return CriterionCurves(lambdas, columns, warnings)


@dataclass
class SelectionResult:
    """Selected smoothing parameter with its criterion curve."""

    criterion: str
    lam: float
    index: int
    curves: CriterionCurves
    warnings: list[str] = field(default_factory=list)


def select_lambda(
    dataset: Dataset,
    lambdas: np.ndarray,
    criterion: str = "gacv",
    fit_config: QPLEConfig | None = None,
    tuning: TuningConfig | None = None,
    truth: Truth | np.ndarray | None = None,
) -> SelectionResult:
    """Grid search for the minimizing lambda; ties go to the larger lambda.

    Raises:
        ContractError: If no grid point produced a finite criterion value.
    """
    base = tuning or TuningConfig()
    tuning = TuningConfig(
        (criterion,), base.replicates, base.sigma_perturb, base.seed, base.jobs
    )
    curves = criterion_curves(dataset, lambdas, tuning, fit_config, truth)
    index = curves.select(criterion)
    warnings = list(curves.warnings)
    if len(curves.lambdas) > 1 and index in (0, len(curves.lambdas) - 1):
        message = f"{criterion} minimum at the grid boundary (lambda={curves.lambdas[index]:.4g})"
        logger.warning(message)
        warnings.append(message)
    logger.info("Selected lambda=%.4g by %s", curves.lambdas[index], criterion)
    return SelectionResult(criterion, float(curves.lambdas[index]), index, curves, warnings)
