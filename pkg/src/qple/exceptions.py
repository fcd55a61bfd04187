"""Custom exceptions for QPLE fitting."""


class QPLEError(Exception):
    """Base exception for QPLE errors."""

    pass


class DomainError(QPLEError, ValueError):
    """Argument outside the domain of a family or kernel."""

    def __init__(self, message: str, value: object = None):
        self.value = value
        super().__init__(message)


class ContractError(QPLEError, ValueError):
    """Precondition of an operation violated."""

    pass


class DegenerateDesignError(QPLEError):
    """Null-space basis is rank deficient at the given points."""

    def __init__(self, rank: int, expected: int, n_points: int):
        self.rank = rank
        self.expected = expected
        self.n_points = n_points
        super().__init__(
            f"Null-space basis has rank {rank}, expected {expected} "
            f"(evaluated at {n_points} points)"
        )


class RuleConstructionError(QPLEError):
    """A quadrature rule could not be constructed."""

    def __init__(self, message: str, distribution: object = None, nodes: int | None = None):
        self.distribution = distribution
        self.nodes = nodes
        details = ""
        if distribution is not None:
            details += f" for {distribution!r}"
        if nodes is not None:
            details += f" with m={nodes}"
        super().__init__(f"Quadrature rule construction failed{details}: {message}")


class SolverDivergenceError(QPLEError):
    """Damped Newton iteration failed to reach a stationary point."""

    def __init__(self, message: str, trace: list[float] | None = None):
        self.trace = list(trace or [])
        last = f"; last objective {self.trace[-1]:.6g}" if self.trace else ""
        super().__init__(f"Newton solver diverged: {message}{last}")


class NullSpaceIdentifiabilityError(QPLEError):
    """Null-space-only model has no unique finite maximizer."""

    def __init__(self, reason: str, coef_norm: float | None = None):
        self.reason = reason
        self.coef_norm = coef_norm
        message = f"Null-space model is not identifiable: {reason}"
        if coef_norm is not None:
            message += f" (coefficient norm {coef_norm:.3g})"
        super().__init__(message)


class FactorizationError(QPLEError):
    """Influence system could not be factorized."""

    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"Influence system is numerically singular (condition number {condition:.3g})")


class CriterionError(QPLEError):
    """A tuning criterion could not be evaluated."""

    def __init__(self, criterion: str, message: str, subject: int | None = None):
        self.criterion = criterion
        self.subject = subject
        location = f" at subject {subject}" if subject is not None else ""
        super().__init__(f"{criterion}{location}: {message}")


class CovariateModelError(QPLEError):
    """Covariate model could not be fitted or conditioned."""

    def __init__(self, message: str, subject: int | None = None):
        self.subject = subject
        location = f" for subject {subject}" if subject is not None else ""
        super().__init__(f"Covariate model failure{location}: {message}")


class IngestionError(QPLEError):
    """Input data or sidecar spec is invalid."""

    def __init__(self, message: str, row: int | None = None, expected: str | None = None):
        self.row = row
        self.expected = expected
        location = f" at row {row}" if row is not None else ""
        text = f"Invalid input{location}: {message}"
        if expected:
            text += f". Expected: {expected}"
        super().__init__(text)
