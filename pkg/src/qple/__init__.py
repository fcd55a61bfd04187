"""QPLE - penalized likelihood regression with randomized covariates.

Fits exponential-family regression functions in a reproducing kernel
Hilbert space when covariates are observed exactly, with measurement
error, as a known distribution, or with coordinates missing at random.
Each subject's covariate law is replaced by a quadrature rule and the
penalized likelihood is maximized by EM; the smoothing parameter is chosen
by GACV, randomized GACV, exact leave-one-subject-out CV or, in
simulations, the true Kullback-Leibler distance.

Example usage:
    import numpy as np
    from qple import (
        Dataset, ErrorKind, ErrorModel, ExactCovariate, NoisyCovariate,
        ExpFamilySpec, CubicSpline, fit_dataset, select_lambda, lambda_grid,
    )

    error = ErrorModel(ErrorKind.NORMAL, np.array([0.145]))
    observations = [NoisyCovariate(x, error) for x in x_err]
    dataset = Dataset(y, observations, ExpFamilySpec.binomial(2), CubicSpline())

    selection = select_lambda(dataset, lambda_grid(-8, 0, 17), "gacv")
    fit = fit_dataset(dataset, selection.lam)
    print(fit.model.evaluate(np.linspace(0, 1, 5)[:, None]))
"""

from .covariates import NormalChainModel
from .em import QPLEConfig, fit_dataset, naive_fit, qple_fit, qple_fit_measurement_error, qple_fit_missing
from .exceptions import (
    ContractError,
    CovariateModelError,
    CriterionError,
    DegenerateDesignError,
    DomainError,
    FactorizationError,
    IngestionError,
    NullSpaceIdentifiabilityError,
    QPLEError,
    RuleConstructionError,
    SolverDivergenceError,
)
from .expfam import ExpFamilySpec, Family
from .exporters import CSVExporter, ExcelExporter, JSONExporter, get_exporter
from .ingest import DatasetReader, read_dataset
from .kernels import (
    SSANOVA,
    CubicProduct,
    CubicSpline,
    GaussianRBF,
    KernelBlock,
    ThinPlate2D,
    parse_kernel,
)
from .models import (
    Dataset,
    DiscreteCovariate,
    DistributionalCovariate,
    ErrorKind,
    ErrorModel,
    ExactCovariate,
    FitResult,
    NoisyCovariate,
    PartiallyMissingCovariate,
    RepresenterModel,
)
from .quadrature import (
    MultivariateNormal,
    Normal,
    QuadratureMethod,
    QuadratureRule,
    Uniform,
    gauss_rule,
    grid_rule,
    multivariate_rule,
)
from .solver import fit_weighted, influence_blocks
from .tuning import TuningConfig, criterion_curves, exact_loocv, gacv, rangacv, select_lambda, tkl
from .utils import lambda_grid

__version__ = "0.1.0"

__all__ = [
    # Fitting
    "QPLEConfig",
    "fit_dataset",
    "qple_fit",
    "qple_fit_measurement_error",
    "qple_fit_missing",
    "naive_fit",
    "fit_weighted",
    "influence_blocks",
    # Tuning
    "TuningConfig",
    "criterion_curves",
    "select_lambda",
    "gacv",
    "rangacv",
    "exact_loocv",
    "tkl",
    "lambda_grid",
    # Models
    "Dataset",
    "ExactCovariate",
    "DiscreteCovariate",
    "DistributionalCovariate",
    "NoisyCovariate",
    "PartiallyMissingCovariate",
    "ErrorKind",
    "ErrorModel",
    "NormalChainModel",
    "RepresenterModel",
    "FitResult",
    # Families and kernels
    "ExpFamilySpec",
    "Family",
    "CubicSpline",
    "ThinPlate2D",
    "GaussianRBF",
    "CubicProduct",
    "KernelBlock",
    "SSANOVA",
    "parse_kernel",
    # Quadrature
    "QuadratureMethod",
    "QuadratureRule",
    "Normal",
    "Uniform",
    "MultivariateNormal",
    "gauss_rule",
    "grid_rule",
    "multivariate_rule",
    # Input and output
    "DatasetReader",
    "read_dataset",
    "JSONExporter",
    "CSVExporter",
    "ExcelExporter",
    "get_exporter",
    # Exceptions
    "QPLEError",
    "DomainError",
    "ContractError",
    "DegenerateDesignError",
    "RuleConstructionError",
    "SolverDivergenceError",
    "NullSpaceIdentifiabilityError",
    "FactorizationError",
    "CriterionError",
    "CovariateModelError",
    "IngestionError",
]
