"""CLI entry point for QPLE regression."""

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .constants import CRITERIA, DEFAULT_NODES_PER_DIM, RANGACV_REPLICATES
from .em import QPLEConfig, fit_dataset
from .exceptions import QPLEError
from .expfam import ExpFamilySpec
from .exporters import (
    evaluation_frame,
    evaluation_points,
    get_exporter,
    read_model,
    write_model,
)
from .ingest import read_dataset, read_points
from .kernels import KernelSpec, parse_kernel
from .models import ErrorKind, FitResult
from .quadrature import QuadratureMethod, QuadratureRule, parse_distribution, rule_for_distribution
from .sim import Case, ErrorSpec, Scenario, run_comparison, sweep_nodes
from .sim.constants import DEFAULT_NOISE_RATIO, DEFAULT_REPLICATES, DEFAULT_SIM_NODES
from .tuning import TuningConfig, select_lambda
from .utils import parse_lambda_grid

app = typer.Typer(
    name="qple",
    help="Penalized likelihood regression with randomized, noisy and missing covariates",
    add_completion=False,
)
console = Console()
err_console = Console(stderr=True, soft_wrap=True, highlight=False)


class OutputFormat(str, Enum):
    """Table output format options."""

    csv = "csv"
    json = "json"
    excel = "excel"


class ErrorOption(str, Enum):
    """Covariate contamination for simulations."""

    none = "none"
    normal = "normal"
    uniform = "uniform"


Verbose = Annotated[bool, typer.Option("-v", "--verbose", help="Show debug logging")]
Family = Annotated[str, typer.Option("--family", help="binomial:k or poisson")]
Kernel = Annotated[str, typer.Option("--kernel", help="cubic, tps, rbf:h or ssanova:...")]
Quadrature = Annotated[QuadratureMethod, typer.Option("--quadrature", help="Rule for continuous laws")]
Nodes = Annotated[int, typer.Option("--nodes", min=1, help="Quadrature nodes per dimension")]
Spec = Annotated[
    Optional[Path],
    typer.Option("--spec", exists=True, readable=True, help="Sidecar JSON with covariate specs"),
]
DataFile = Annotated[
    Path, typer.Argument(help="CSV with header y,x1..xd", exists=True, readable=True)
]
OutDir = Annotated[Path, typer.Option("-o", "--out", help="Output directory")]


def _configure_logging(verbose: bool) -> None:
    logger = logging.getLogger("qple")
    logger.handlers.clear()
    logger.addHandler(RichHandler(console=err_console, show_path=False))
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    logger.propagate = False


@contextmanager
def _reporting_errors() -> Iterator[None]:
    """Turn library errors into one machine-parsable stderr line and exit 1."""
    try:
        yield
    except QPLEError as exc:
        err_console.print(f"[bold red]error:[/bold red] {type(exc).__name__}: {escape(str(exc))}")
        raise typer.Exit(1) from exc


def _family(text: str) -> ExpFamilySpec:
    try:
        return ExpFamilySpec.parse(text)
    except QPLEError as exc:
        raise typer.BadParameter(str(exc), param_hint="--family") from exc


def _kernel(text: str) -> KernelSpec:
    try:
        return parse_kernel(text)
    except QPLEError as exc:
        raise typer.BadParameter(str(exc), param_hint="--kernel") from exc


def _grid(text: str) -> np.ndarray:
    try:
        return parse_lambda_grid(text)
    except QPLEError as exc:
        raise typer.BadParameter(str(exc), param_hint="--lambda-grid") from exc


def _show_warnings(warnings: list[str]) -> None:
    if warnings:
        console.print(f"\n[bold yellow]Warnings ({len(warnings)}):[/bold yellow]")
        for warning in dict.fromkeys(warnings):
            console.print(f"  [yellow]• {escape(warning)}[/yellow]")


def _show_fit(fit: FitResult) -> None:
    table = Table(title="Fit", show_header=False)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Subjects", str(fit.n))
    table.add_row("Quadrature nodes", str(len(fit.final_weights)))
    table.add_row("Lambda", f"{fit.lam:.6g}")
    table.add_row("EM iterations", str(len(fit.em_trace)))
    table.add_row("Converged", "yes" if fit.converged else "no")
    if fit.nuisance.error_scale is not None:
        table.add_row("Error scale", ", ".join(f"{s:.4g}" for s in fit.nuisance.error_scale))
    console.print(table)


def _write_fit(fit: FitResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_model(fit, out / "model.json")
    evaluation_frame(fit.model, evaluation_points(fit)).to_csv(
        out / "evaluation.csv", index=False, lineterminator="\n"
    )


def _read_truth(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """True covariates and natural-parameter values from a CSV x1..xd,f."""
    frame = pd.read_csv(path)
    columns = [str(c) for c in frame.columns]
    if len(columns) < 2 or columns[-1] != "f" or columns[:-1] != [f"x{j}" for j in range(1, len(columns))]:
        raise typer.BadParameter("truth CSV needs header x1,...,xd,f", param_hint="--truth")
    values = frame.to_numpy(dtype=float)
    return values[:, :-1], values[:, -1]


@app.command()
def fit(
    data: DataFile,
    lam: Annotated[float, typer.Option("--lambda", min=0.0, help="Smoothing parameter")],
    spec: Spec = None,
    family: Family = "poisson",
    kernel: Kernel = "cubic",
    quadrature: Quadrature = QuadratureMethod.GAUSS,
    nodes: Nodes = DEFAULT_NODES_PER_DIM,
    out: OutDir = Path("qple-fit"),
    verbose: Verbose = False,
) -> None:
    """Fit at a fixed smoothing parameter; writes model.json and evaluation.csv."""
    _configure_logging(verbose)
    fam, kern = _family(family), _kernel(kernel)
    with _reporting_errors():
        dataset = read_dataset(data, spec, fam, kern)
        config = QPLEConfig(nodes_per_dim=nodes, method=quadrature)
        with console.status("[bold green]Fitting..."):
            result = fit_dataset(dataset, lam, config)
        _write_fit(result, out)

    _show_fit(result)
    _show_warnings(result.warnings)
    console.print(f"\n[bold green]✓[/bold green] Wrote model and evaluation grid to: {out}")


@app.command()
def tune(
    data: DataFile,
    spec: Spec = None,
    family: Family = "poisson",
    kernel: Kernel = "cubic",
    lambda_grid_text: Annotated[
        str, typer.Option("--lambda-grid", help="lo:hi:count in log10 units")
    ] = "-8:1:40",
    criterion: Annotated[str, typer.Option("--criterion", help="gacv, rangacv, loocv or tkl")] = "gacv",
    replicates: Annotated[
        int, typer.Option("--replicates", min=1, help="ranGACV perturbation replicates")
    ] = RANGACV_REPLICATES,
    sigma_perturb: Annotated[
        Optional[float], typer.Option("--sigma-perturb", min=0.0, help="ranGACV perturbation sd")
    ] = None,
    seed: Annotated[int, typer.Option("--seed", help="Random seed")] = 0,
    jobs: Annotated[int, typer.Option("--jobs", help="Parallel lambda-grid workers")] = 1,
    truth: Annotated[
        Optional[Path],
        typer.Option("--truth", exists=True, readable=True, help="CSV x1..xd,f of true values (tkl)"),
    ] = None,
    quadrature: Quadrature = QuadratureMethod.GAUSS,
    nodes: Nodes = DEFAULT_NODES_PER_DIM,
    format: Annotated[OutputFormat, typer.Option("-f", "--format", help="Criterion table format")] = (
        OutputFormat.csv
    ),
    out: OutDir = Path("qple-tune"),
    verbose: Verbose = False,
) -> None:
    """Select lambda on a grid; writes the criterion curve and the selected fit."""
    _configure_logging(verbose)
    if criterion not in CRITERIA:
        raise typer.BadParameter(f"choose from {', '.join(CRITERIA)}", param_hint="--criterion")
    if criterion == "tkl" and truth is None:
        raise typer.BadParameter("criterion 'tkl' requires --truth", param_hint="--truth")
    fam, kern, lambdas = _family(family), _kernel(kernel), _grid(lambda_grid_text)
    true_points = true_values = None
    if truth is not None:
        true_points, true_values = _read_truth(truth)

    with _reporting_errors():
        dataset = read_dataset(data, spec, fam, kern)
        if true_points is not None:
            dataset.true_covariates = true_points
        config = QPLEConfig(nodes_per_dim=nodes, method=quadrature)
        tuning = TuningConfig((criterion,), replicates, sigma_perturb, seed, jobs)
        with console.status(f"[bold green]Evaluating {criterion} on {len(lambdas)} lambdas..."):
            selection = select_lambda(dataset, lambdas, criterion, config, tuning, true_values)
            result = fit_dataset(dataset, selection.lam, config)
        get_exporter(format.value).export({"criterion": selection.curves.to_frame()}, out)
        _write_fit(result, out)

    console.print(f"\n[bold]Selected lambda:[/bold] {selection.lam:.6g} (by {criterion})")
    _show_fit(result)
    _show_warnings(selection.warnings + result.warnings)
    console.print(f"\n[bold green]✓[/bold green] Wrote criterion curve and fit to: {out}")


@app.command()
def simulate(
    case: Annotated[Case, typer.Option("--case", help="Simulation case")] = Case.I,
    error: Annotated[ErrorOption, typer.Option("--error", help="Measurement-error family")] = (
        ErrorOption.normal
    ),
    noise_ratio: Annotated[
        float, typer.Option("--noise-ratio", min=0.0, help="var(u) / var(X)")
    ] = DEFAULT_NOISE_RATIO,
    assume: Annotated[
        Optional[ErrorOption], typer.Option("--assume", help="Error family assumed by the fit")
    ] = None,
    unknown_error: Annotated[
        bool, typer.Option("--unknown-error", help="Estimate the error scale by EM")
    ] = False,
    n: Annotated[Optional[int], typer.Option("--n", min=1, help="Sample size")] = None,
    replicates: Annotated[
        int, typer.Option("--replicates", min=1, max=100, help="Monte Carlo replicates")
    ] = DEFAULT_REPLICATES,
    lambda_grid_text: Annotated[
        str, typer.Option("--lambda-grid", help="lo:hi:count in log10 units")
    ] = "-8:0:17",
    tunings: Annotated[str, typer.Option("--tunings", help="Comma-separated: tkl,rangacv")] = "tkl,rangacv",
    quadrature: Quadrature = QuadratureMethod.GAUSS,
    nodes: Nodes = DEFAULT_SIM_NODES,
    sweep: Annotated[
        Optional[str], typer.Option("--sweep-nodes", help="Comma-separated node counts to sweep")
    ] = None,
    seed: Annotated[int, typer.Option("--seed", help="Random seed")] = 0,
    jobs: Annotated[int, typer.Option("--jobs", help="Parallel replicate workers")] = 1,
    format: Annotated[OutputFormat, typer.Option("-f", "--format", help="Table format")] = OutputFormat.csv,
    out: OutDir = Path("qple-sim"),
    verbose: Verbose = False,
) -> None:
    """Compare full-data, QPLE and naive fits on a simulation case."""
    _configure_logging(verbose)
    grid = _grid(lambda_grid_text)
    bounds = (float(np.log10(grid[0])), float(np.log10(grid[-1])), len(grid))
    error_spec = None
    if not case.is_bivariate and error != ErrorOption.none:
        error_spec = ErrorSpec.from_ratio(ErrorKind(error.value), noise_ratio, known=not unknown_error)
        if assume is not None and assume != ErrorOption.none:
            error_spec.assumed = ErrorKind(assume.value)
    try:
        scenario = Scenario(
            case,
            n=n,
            error=error_spec,
            missingness=case.is_bivariate,
            replicates=replicates,
            seed=seed,
            nodes_per_dim=nodes,
            method=quadrature,
            lambda_grid=bounds,
            tunings=tuple(t.strip() for t in tunings.split(",") if t.strip()),
        )
    except ValueError as exc:
        raise typer.BadParameter(str(exc)) from exc

    exporter = get_exporter(format.value)
    with _reporting_errors():
        if sweep is not None:
            counts = [int(c) for c in sweep.split(",") if c.strip()]
            with console.status("[bold green]Sweeping node counts..."):
                frame = sweep_nodes(scenario, counts, jobs=jobs)
            exporter.export({"sweep": frame}, out)
            console.print(f"\n[bold green]✓[/bold green] Wrote node sweep to: {out}")
            return
        with console.status(f"[bold green]Running {replicates} replicates of case {case.value}..."):
            result = run_comparison(scenario, jobs)
        summary = result.summary()
        exporter.export({"comparison": result.to_frame(), "summary": summary}, out)

    table = Table(title=f"TKL by method, case {case.value}")
    for column in ("method", "tuning", "count", "median", "mean"):
        table.add_column(column.capitalize(), style="cyan" if column in ("method", "tuning") else "green")
    for row in summary.itertuples(index=False):
        table.add_row(row.method, row.tuning, str(row.count), f"{row.median:.4g}", f"{row.mean:.4g}")
    console.print(table)
    if result.incomplete_counts and case.is_bivariate:
        console.print(f"  Mean incomplete subjects: {np.mean(result.incomplete_counts):.1f}")
    _show_warnings(result.warnings)
    console.print(f"\n[bold green]✓[/bold green] Wrote comparison tables to: {out}")


@app.command()
def quad(
    distribution: Annotated[
        str, typer.Argument(help="normal:mu:sigma, uniform:low:high or discrete:v1,v2:p1,p2")
    ],
    quadrature: Quadrature = QuadratureMethod.GAUSS,
    nodes: Nodes = DEFAULT_NODES_PER_DIM,
    verbose: Verbose = False,
) -> None:
    """Print a quadrature rule as CSV (node, weight)."""
    _configure_logging(verbose)
    with _reporting_errors():
        rule: QuadratureRule = rule_for_distribution(parse_distribution(distribution), nodes, quadrature)
    frame = pd.DataFrame({"node": rule.nodes[:, 0], "weight": rule.weights})
    typer.echo(frame.to_csv(index=False, lineterminator="\n"), nl=False)


@app.command()
def evaluate(
    model: Annotated[Path, typer.Argument(help="model.json written by fit", exists=True, readable=True)],
    points: Annotated[Path, typer.Argument(help="CSV with header x1..xd", exists=True, readable=True)],
    output: Annotated[
        Optional[Path], typer.Option("-o", "--output", help="Output CSV (default: stdout)")
    ] = None,
    verbose: Verbose = False,
) -> None:
    """Evaluate a saved model at the given points."""
    _configure_logging(verbose)
    with _reporting_errors():
        fitted = read_model(model)
        frame = evaluation_frame(fitted, read_points(points))
    if output is None:
        typer.echo(frame.to_csv(index=False, lineterminator="\n"), nl=False)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, lineterminator="\n")
    console.print(f"[bold green]✓[/bold green] Wrote {len(frame)} evaluations to: {output}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
