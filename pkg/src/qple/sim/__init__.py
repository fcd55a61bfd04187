"""Simulation harness: test functions, contamination mechanisms and method comparison."""

from .comparison import replicate_seed, run_comparison, scenario_datasets, sweep_nodes
from .functions import family_for, franke, kernel_for, natural_parameter, test_function
from .generators import (
    apply_measurement_error,
    apply_missingness,
    complete_cases,
    generate_dataset,
    naive_measurement_error,
)
from .models import Case, ComparisonRecord, ComparisonResult, ErrorSpec, Scenario

__all__ = [
    "Case",
    "ComparisonRecord",
    "ComparisonResult",
    "ErrorSpec",
    "Scenario",
    "apply_measurement_error",
    "apply_missingness",
    "complete_cases",
    "family_for",
    "franke",
    "generate_dataset",
    "kernel_for",
    "naive_measurement_error",
    "natural_parameter",
    "replicate_seed",
    "run_comparison",
    "scenario_datasets",
    "sweep_nodes",
    "test_function",
]
