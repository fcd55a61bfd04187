"""Full / QPLE / naive comparison harness."""

import logging
from dataclasses import replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..em import QPLEConfig
from ..models import Dataset
from ..quadrature import QuadratureMethod
from ..tuning import TuningConfig, criterion_curves
from ..utils import lambda_grid, spawn_rng
from .functions import TrueFunction
from .generators import (
    apply_measurement_error,
    apply_missingness,
    complete_cases,
    count_incomplete,
    full_data,
    generate_dataset,
    naive_measurement_error,
)
from .models import ComparisonRecord, ComparisonResult, Scenario

logger = logging.getLogger(__name__)


def replicate_seed(seed: int, replicate: int) -> int:
    """Integer seed of one replicate's sub-stream."""
    return int(spawn_rng(seed, replicate).integers(2**32))


def scenario_datasets(scenario: Scenario, replicate: int) -> tuple[dict[str, Dataset], np.ndarray]:
    """Datasets seen by each method in one replicate, plus the true covariates."""
    seed = replicate_seed(scenario.seed, replicate)
    base = generate_dataset(scenario.case, scenario.n, seed)
    if scenario.missingness:
        observed = apply_missingness(base, seed)
        naive = complete_cases(observed)
    elif scenario.error is not None:
        observed = apply_measurement_error(base, scenario.error, scenario.n_exact, seed)
        naive = naive_measurement_error(observed)
    else:
        observed = naive = base
    datasets = {"full": full_data(base), "qple": observed, "naive": naive}
    return {method: datasets[method] for method in scenario.methods}, base.true_covariates


def fit_config_for(scenario: Scenario) -> QPLEConfig:
    """Fit settings; univariate cases keep the unit interval inside the scaled domain."""
    domain = None if scenario.case.is_bivariate else (np.zeros(1), np.ones(1))
    return QPLEConfig(nodes_per_dim=scenario.nodes_per_dim, method=scenario.method, domain=domain)


def _run_replicate(scenario: Scenario, replicate: int) -> tuple[list[ComparisonRecord], int, list[str]]:
    datasets, true_points = scenario_datasets(scenario, replicate)
    truth = TrueFunction(scenario.case)
    lambdas = lambda_grid(*scenario.lambda_grid)
    config = fit_config_for(scenario)
    criteria = tuple(dict.fromkeys(("tkl",) + tuple(scenario.tunings)))
    tuning = TuningConfig(criteria, seed=replicate_seed(scenario.seed, replicate))
    records: list[ComparisonRecord] = []
    warnings: list[str] = []
    for method, dataset in datasets.items():
        curves = criterion_curves(dataset, lambdas, tuning, config, truth, true_points=true_points)
        warnings.extend(f"replicate {replicate} {method}: {w}" for w in curves.warnings)
        for rule in scenario.tunings:
            if np.all(np.isnan(curves.values[rule])):
                warnings.append(f"replicate {replicate} {method}: no finite {rule} value")
                continue
            index = curves.select(rule)
            records.append(
                ComparisonRecord(
                    replicate, method, rule, float(lambdas[index]), float(curves.values["tkl"][index])
                )
            )
    incomplete = count_incomplete(datasets["qple"]) if "qple" in datasets else 0
    logger.info("Replicate %d of case %s done", replicate, scenario.case.value)
    return records, incomplete, warnings


def run_comparison(scenario: Scenario, jobs: int = 1) -> ComparisonResult:
    """Fit, tune and score every method on every replicate.

    Each replicate draws its data from its own seed sub-stream, so results
    do not depend on ``jobs``.
    """
    logger.info(
        "Running case %s: %d replicates, methods %s, tunings %s",
        scenario.case.value,
        scenario.replicates,
        ",".join(scenario.methods),
        ",".join(scenario.tunings),
    )
    if jobs == 1:
        outputs = [_run_replicate(scenario, r) for r in range(scenario.replicates)]
    else:
        outputs = Parallel(n_jobs=jobs)(
            delayed(_run_replicate)(scenario, r) for r in range(scenario.replicates)
        )
    result = ComparisonResult(scenario)
    for records, incomplete, warnings in outputs:
        result.records.extend(records)
        result.incomplete_counts.append(incomplete)
        result.warnings.extend(warnings)
    return result


def sweep_nodes(
    scenario: Scenario,
    node_counts: list[int],
    methods: tuple[QuadratureMethod, ...] = (QuadratureMethod.GAUSS, QuadratureMethod.GRID),
    jobs: int = 1,
) -> pd.DataFrame:
    """Mean and median TKL of TKL-tuned QPLE per quadrature method and node count."""
    rows = []
    for method in methods:
        for nodes in node_counts:
            variant = replace(
                scenario, nodes_per_dim=int(nodes), method=method, methods=("qple",), tunings=("tkl",)
            )
            frame = run_comparison(variant, jobs).to_frame()
            rows.append(
                {
                    "quadrature": QuadratureMethod(method).value,
                    "nodes": int(nodes),
                    "mean_tkl": float(frame.tkl.mean()),
                    "median_tkl": float(frame.tkl.median()),
                }
            )
    return pd.DataFrame(rows, columns=["quadrature", "nodes", "mean_tkl", "median_tkl"])
