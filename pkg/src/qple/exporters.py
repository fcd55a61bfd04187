"""Export functionality for fits, criterion curves and simulation tables."""

import json
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import IngestionError
from .models import FitResult, RepresenterModel

# evaluation grid resolution per covariate dimension
GRID_POINTS_1D = 101
GRID_POINTS_2D = 41


class BaseExporter(ABC):
    """Base class for table exporters."""

    @abstractmethod
    def export(self, tables: dict[str, pd.DataFrame], output_path: str | Path) -> list[Path]:
        """Export named tables.

        Args:
            tables: Table name to frame
            output_path: Output directory

        Returns:
            Paths written
        """
        pass


class CSVExporter(BaseExporter):
    """One ``<name>.csv`` per table."""

    def export(self, tables: dict[str, pd.DataFrame], output_path: str | Path) -> list[Path]:
        output_dir = Path(output_path)
        output_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, frame in tables.items():
            path = output_dir / f"{name}.csv"
            frame.to_csv(path, index=False, lineterminator="\n")
            written.append(path)
        return written


class JSONExporter(BaseExporter):
    """All tables in one ``tables.json`` as lists of records."""

    def __init__(self, indent: int = 2):
        self.indent = indent

    def export(self, tables: dict[str, pd.DataFrame], output_path: str | Path) -> list[Path]:
        output_dir = Path(output_path)
        output_dir.mkdir(parents=True, exist_ok=True)
        path = output_dir / "tables.json"
        payload = {
            name: json.loads(frame.to_json(orient="records", double_precision=15))
            for name, frame in tables.items()
        }
        write_json(payload, path, self.indent)
        return [path]


class ExcelExporter(BaseExporter):
    """Single ``tables.xlsx`` workbook with one sheet per table."""

    def export(self, tables: dict[str, pd.DataFrame], output_path: str | Path) -> list[Path]:
        output_dir = Path(output_path)
        output_dir.mkdir(parents=True, exist_ok=True)
        path = output_dir / "tables.xlsx"
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            for name, frame in tables.items():
                # sheet names are limited to 31 characters
                frame.to_excel(writer, sheet_name=name.title()[:31], index=False)
        return [path]


def get_exporter(format: str) -> BaseExporter:
    """Get exporter for the specified format.

    Args:
        format: Export format ('csv', 'json', or 'excel')

    Returns:
        Exporter instance

    Raises:
        ValueError: If format is not supported
    """
    exporters = {
        "csv": CSVExporter,
        "json": JSONExporter,
        "excel": ExcelExporter,
        "xlsx": ExcelExporter,
    }

    exporter_class = exporters.get(format.lower())
    if exporter_class is None:
        raise ValueError(f"Unsupported format: {format}. Supported: csv, json, excel")

    return exporter_class()


def write_json(data: dict, path: str | Path, indent: int = 2) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent)
        f.write("\n")
    return path


def write_model(fit: FitResult, path: str | Path) -> Path:
    """Model artifact: coefficients, nodes, kernel, lambda, theta and EM trace."""
    return write_json(fit.to_dict(), path)


def read_model(path: str | Path) -> RepresenterModel:
    """Reload the fitted function from a model artifact.

    Raises:
        IngestionError: If the file is missing or not a model artifact.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        return RepresenterModel.from_dict(data.get("model", data))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IngestionError(
            f"not a model artifact ({exc})", expected="model JSON written by 'qple fit'"
        ) from exc


def evaluation_points(fit: FitResult) -> np.ndarray:
    """Regular grid over the range of the subjects' covariate means.

    Grids are drawn for one and two covariates; higher dimensions use the
    subject means themselves.
    """
    means = np.array([rule.mean() for rule in fit.rules])
    low, high = means.min(axis=0), means.max(axis=0)
    if means.shape[1] == 1:
        return np.linspace(low[0], high[0], GRID_POINTS_1D)[:, None]
    if means.shape[1] == 2:
        g1 = np.linspace(low[0], high[0], GRID_POINTS_2D)
        g2 = np.linspace(low[1], high[1], GRID_POINTS_2D)
        a, b = np.meshgrid(g1, g2, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])
    return means


def evaluation_frame(model: RepresenterModel, points: np.ndarray) -> pd.DataFrame:
    """Columns x1..xd, f_hat and mean."""
    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    f = model.evaluate(points)
    frame = pd.DataFrame(points, columns=[f"x{j + 1}" for j in range(points.shape[1])])
    frame["f_hat"] = f
    frame["mean"] = model.family.first(f)
    return frame
