"""Weighted penalized likelihood solver (EM M-step) and influence blocks.

The minimizer lies in the span of the null space and the kernel sections
at the nodes. Kernel coefficients are written c = Q2 gamma with Q2 an
orthonormal basis of the complement of the null-space columns at the
nodes, so S'c = 0 and the Newton system is square in theta = (d, gamma).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, solve

from .constants import (
    ARMIJO_C,
    ARMIJO_MAX_HALVINGS,
    ARMIJO_SHRINK,
    GRAM_JITTER,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    NULLSPACE_COEF_NORM_CAP,
    NULLSPACE_IRLS_MAX_ITER,
    NULLSPACE_IRLS_TOL,
)
from .exceptions import (
    ContractError,
    DegenerateDesignError,
    FactorizationError,
    NullSpaceIdentifiabilityError,
    SolverDivergenceError,
)
from .expfam import ExpFamilySpec
from .kernels import CovariateScaler, KernelSpec, gram, null_basis, null_design
from .models import FitResult, InfluenceBlocks, RepresenterModel, StackedRules
from .quadrature import QuadratureRule

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Damped Newton settings."""

    tol: float = NEWTON_TOL
    max_iter: int = NEWTON_MAX_ITER
    shrink: float = ARMIJO_SHRINK
    max_halvings: int = ARMIJO_MAX_HALVINGS
    armijo_c: float = ARMIJO_C
    jitter: float = GRAM_JITTER


class RepresenterBasis:
    """Design T = [S, K Q2] and block penalty for a fixed node set.

    Args:
        nodes: Scaled node coordinates (N, d)
        kernel: Reproducing kernel
        jitter: Relative ridge added to the gamma block of the penalty
    """

    def __init__(self, nodes: np.ndarray, kernel: KernelSpec, jitter: float = GRAM_JITTER):
        self.nodes = np.asarray(nodes, dtype=float)
        self.kernel = kernel
        self.S = null_basis(self.nodes, kernel)
        n_nodes, p = self.S.shape
        if n_nodes < p:
            raise DegenerateDesignError(n_nodes, p, n_nodes)
        self.K = gram(self.nodes, kernel)
        q, _ = np.linalg.qr(self.S, mode="complete")
        self.Q2 = q[:, p:]
        kq2 = self.K @ self.Q2
        reduced = self.Q2.T @ kq2
        reduced = (reduced + reduced.T) / 2.0
        size = reduced.shape[0]
        scale = np.trace(reduced) / size if size else 0.0
        self.ridge = jitter * scale if scale > 0 else jitter
        self.design = np.hstack([self.S, kq2])
        self.penalty = np.zeros((n_nodes, n_nodes))
        self.penalty[p:, p:] = reduced + self.ridge * np.eye(size)
        self.p = p

    @property
    def size(self) -> int:
        return self.design.shape[1]

    def fitted(self, theta: np.ndarray) -> np.ndarray:
        return self.design @ theta

    def coefficients(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Null-space coefficients d and kernel coefficients c."""
        return theta[: self.p].copy(), self.Q2 @ theta[self.p :]

    def theta_from_values(self, values: np.ndarray) -> np.ndarray:
        """Coordinates whose fitted node values best match ``values``."""
        return np.linalg.lstsq(self.design, values, rcond=None)[0]

    def model(
        self, theta: np.ndarray, lam: float, scaler: CovariateScaler, family: ExpFamilySpec
    ) -> RepresenterModel:
        d, c = self.coefficients(theta)
        return RepresenterModel(d, c, self.nodes.copy(), self.kernel, float(lam), scaler, family)


class WeightedObjective:
    """-(1/n) sum w (y f - b(f)) + (lam/2) theta' P theta in representer coordinates."""

    def __init__(
        self,
        basis: RepresenterBasis,
        y_nodes: np.ndarray,
        weights: np.ndarray,
        lam: float,
        family: ExpFamilySpec,
        n_scale: int,
    ):
        self.basis = basis
        self.y = np.asarray(y_nodes, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        self.lam = float(lam)
        self.family = family
        self.n_scale = n_scale

    def value(self, theta: np.ndarray) -> float:
        f = self.basis.fitted(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = -np.dot(self.w, self.family.canonical_loglik(self.y, f)) / self.n_scale
        return float(loss + 0.5 * self.lam * theta @ self.basis.penalty @ theta)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        f = self.basis.fitted(theta)
        score = -self.w * (self.y - self.family.first(f))
        return self.basis.design.T @ score / self.n_scale + self.lam * self.basis.penalty @ theta

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        f = self.basis.fitted(theta)
        curvature = self.w * self.family.second(f)
        design = self.basis.design
        return design.T @ (design * curvature[:, None]) / self.n_scale + self.lam * self.basis.penalty


@dataclass
class WeightedFit:
    """Outcome of one M-step."""

    theta: np.ndarray
    fitted: np.ndarray
    objective: float
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    stalled: bool = False


def _newton_step(hessian: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    try:
        return -cho_solve(cho_factor(hessian), gradient)
    except LinAlgError:
        return -np.linalg.lstsq(hessian, gradient, rcond=None)[0]


def minimize_weighted(
    objective: WeightedObjective, theta0: np.ndarray, config: SolverConfig | None = None
) -> WeightedFit:
    """Damped Newton with Armijo backtracking.

    Raises:
        SolverDivergenceError: If no acceptable step exists away from a
            stationary point, or the iteration budget is exhausted.
    """
    config = config or SolverConfig()
    theta = np.asarray(theta0, dtype=float).copy()
    value = objective.value(theta)
    if not np.isfinite(value):
        raise SolverDivergenceError("objective is not finite at the starting point", [value])
    trace = [value]
    for iteration in range(config.max_iter + 1):
        gradient = objective.gradient(theta)
        scale = 1.0 + abs(value)
        if np.max(np.abs(gradient)) <= config.tol * scale:
            return WeightedFit(theta, objective.basis.fitted(theta), value, trace, iteration)
        if iteration == config.max_iter:
            break
        step = _newton_step(objective.hessian(theta), gradient)
        decrement = -float(gradient @ step)
        if decrement <= 0:
            step, decrement = -gradient, float(gradient @ gradient)
        if decrement < 1e-15 * scale:
            return WeightedFit(theta, objective.basis.fitted(theta), value, trace, iteration)
        t = 1.0
        for _ in range(config.max_halvings + 1):
            candidate = theta + t * step
            candidate_value = objective.value(candidate)
            if np.isfinite(candidate_value) and candidate_value <= value - config.armijo_c * t * decrement:
                break
            t *= config.shrink
        else:
            if np.max(np.abs(gradient)) <= np.sqrt(config.tol) * scale:
                logger.debug("Line search stalled near a stationary point; accepting")
                fitted = objective.basis.fitted(theta)
                return WeightedFit(theta, fitted, value, trace, iteration, stalled=True)
            raise SolverDivergenceError("backtracking budget exhausted", trace)
        theta, value = candidate, candidate_value
        trace.append(value)
    raise SolverDivergenceError(f"no convergence in {config.max_iter} Newton iterations", trace)


def _validate_weights(weights: np.ndarray, stacked: StackedRules) -> None:
    if len(weights) != stacked.total:
        raise ContractError(f"Expected {stacked.total} node weights, got {len(weights)}")
    if np.any(weights < 0):
        raise ContractError("Node weights must be non-negative")
    sums = np.add.reduceat(weights, stacked.offsets[:-1])
    if np.any(np.abs(sums - 1.0) > 1e-8):
        raise ContractError("Per-subject node weights must sum to one")


def fit_weighted(
    y: np.ndarray,
    rules: list[QuadratureRule],
    weights: np.ndarray,
    lam: float,
    kernel: KernelSpec,
    family: ExpFamilySpec,
    warm_start: RepresenterModel | None = None,
    *,
    scaler: CovariateScaler | None = None,
    n_scale: int | None = None,
    config: SolverConfig | None = None,
) -> RepresenterModel:
    """Minimize the weighted complete-data penalized likelihood.

    Args:
        y: Responses per subject (length n) or per node (length N)
        rules: Per-subject quadrature rules in raw covariate units
        weights: Per-node weights, summing to one within each subject
        lam: Smoothing parameter
        kernel: Reproducing kernel
        family: Response family
        warm_start: Previous model whose values at the nodes start Newton
        scaler: Covariate map; fitted on the nodes when omitted
        n_scale: Divisor of the likelihood term; defaults to n
        config: Newton settings

    Returns:
        The fitted RepresenterModel.
    """
    if not lam > 0:
        raise ContractError(f"Smoothing parameter must be positive, got {lam}")
    config = config or SolverConfig()
    stacked = StackedRules(rules)
    weights = np.asarray(weights, dtype=float)
    _validate_weights(weights, stacked)
    y = np.asarray(y, dtype=float)
    y_nodes = stacked.expand(y) if len(y) == stacked.n and stacked.n != stacked.total else y
    if len(y_nodes) != stacked.total:
        raise ContractError(f"Expected {stacked.n} or {stacked.total} responses, got {len(y)}")
    scaler = scaler or CovariateScaler.fit(stacked.nodes)
    basis = RepresenterBasis(scaler.transform(stacked.nodes), kernel, config.jitter)
    theta0 = (
        basis.theta_from_values(warm_start.evaluate(stacked.nodes))
        if warm_start is not None
        else np.zeros(basis.size)
    )
    objective = WeightedObjective(basis, y_nodes, weights, lam, family, n_scale or stacked.n)
    result = minimize_weighted(objective, theta0, config)
    return basis.model(result.theta, lam, scaler, family)


def evaluate(model: RepresenterModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fitted natural parameter and mean at raw query points."""
    f = model.evaluate(points)
    return f, model.family.first(f)


def check_null_space(
    y: np.ndarray, points: np.ndarray, kernel: KernelSpec, family: ExpFamilySpec
) -> np.ndarray:
    """Fit the null-space-only GLM by IRLS and require a finite maximizer.

    Args:
        y: Responses per subject
        points: One scaled representative point per subject

    Returns:
        The null-space coefficients.

    Raises:
        NullSpaceIdentifiabilityError: If IRLS fails to converge or the
            coefficients run off to infinity.
    """
    design = null_design(points, kernel)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise NullSpaceIdentifiabilityError("null-space design is rank deficient")
    beta = np.zeros(design.shape[1])
    for _ in range(NULLSPACE_IRLS_MAX_ITER):
        eta = design @ beta
        info = design.T @ (design * family.second(eta)[:, None])
        step = np.linalg.lstsq(info, design.T @ (y - family.first(eta)), rcond=None)[0]
        beta = beta + step
        norm = float(np.linalg.norm(beta))
        if not np.isfinite(norm) or norm > NULLSPACE_COEF_NORM_CAP:
            raise NullSpaceIdentifiabilityError("coefficients diverge", norm)
        if np.max(np.abs(step)) <= NULLSPACE_IRLS_TOL * (1.0 + np.max(np.abs(beta))):
            return beta
    raise NullSpaceIdentifiabilityError(
        f"IRLS did not converge in {NULLSPACE_IRLS_MAX_ITER} steps", float(np.linalg.norm(beta))
    )


def _subject_blocks(
    y: np.ndarray, f: np.ndarray, w: np.ndarray, family: ExpFamilySpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject derivative blocks (B, D) of the node score."""
    r = y - family.first(f)
    variance = family.second(f)
    wr = w * r
    d_block = np.outer(wr, wr)
    np.fill_diagonal(d_block, w * variance - w * (1.0 - w) * r**2)
    # b_st = w_s w_t f_s r_t off the diagonal
    b_block = np.outer(w * f, wr)
    np.fill_diagonal(b_block, -w * (1.0 + (1.0 - w) * f * r))
    return b_block, d_block


def influence_blocks(fit: FitResult, basis: RepresenterBasis | None = None) -> InfluenceBlocks:
    """Influence matrix H = d f / d y at the converged fit.

    ``B`` is stored in the orientation whose transpose is the derivative
    of the node score in y, so H = -T (T'DT + n lam P)^-1 T' B'.

    Raises:
        FactorizationError: If the Newton system is singular.
    """
    basis = basis or fit.extras.get("basis") or RepresenterBasis(fit.model.nodes, fit.model.kernel)
    stacked = fit.stacked
    f = basis.fitted(fit.coefficients)
    b_blocks, d_blocks = [], []
    for i in range(stacked.n):
        block = stacked.block(i)
        b_block, d_block = _subject_blocks(fit.y_nodes[block], f[block], fit.final_weights[block], fit.family)
        b_blocks.append(b_block)
        d_blocks.append(d_block)
    design = basis.design
    system = design.T @ block_diag(*d_blocks) @ design + fit.n_scale * fit.lam * basis.penalty
    rhs = design.T @ block_diag(*b_blocks).T
    try:
        solved = solve(system, rhs, assume_a="gen")
    except (LinAlgError, ValueError) as exc:
        raise FactorizationError(float("inf")) from exc
    if not np.all(np.isfinite(solved)):
        raise FactorizationError(float(np.linalg.cond(system)))
    return InfluenceBlocks(
        W=fit.family.second(f),
        B=b_blocks,
        D=d_blocks,
        H=-design @ solved,
        sizes=stacked.sizes.copy(),
    )
