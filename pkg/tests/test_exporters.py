"""Tests for exporters and model artifacts."""

import json

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

from qple.em import qple_fit
from qple.exceptions import IngestionError
from qple.exporters import (
    CSVExporter,
    ExcelExporter,
    JSONExporter,
    evaluation_frame,
    evaluation_points,
    get_exporter,
    read_model,
    write_model,
)


@pytest.fixture
def tables():
    return {
        "curves": pd.DataFrame({"lambda": [0.01, 0.1], "gacv": [1.25, 1.5]}),
        "summary": pd.DataFrame({"criterion": ["gacv"], "lambda": [0.01]}),
    }


@pytest.fixture
def fit(exact_poisson_dataset):
    return qple_fit(exact_poisson_dataset, 1e-3)


class TestExporters:
    """Tests for table exporters."""

    def test_csv(self, tables, tmp_path):
        """Test one CSV per table."""
        paths = CSVExporter().export(tables, tmp_path / "out")
        assert sorted(p.name for p in paths) == ["curves.csv", "summary.csv"]
        frame = pd.read_csv(tmp_path / "out" / "curves.csv")
        pd.testing.assert_frame_equal(frame, tables["curves"])

    def test_json(self, tables, tmp_path):
        """Test all tables land in one JSON file as records."""
        (path,) = JSONExporter().export(tables, tmp_path)
        data = json.loads(path.read_text())
        assert set(data) == {"curves", "summary"}
        assert data["curves"][1] == {"lambda": 0.1, "gacv": 1.5}

    def test_excel(self, tables, tmp_path):
        """Test one sheet per table."""
        (path,) = ExcelExporter().export(tables, tmp_path)
        workbook = load_workbook(path)
        assert workbook.sheetnames == ["Curves", "Summary"]
        frame = pd.read_excel(path, sheet_name="Curves")
        np.testing.assert_allclose(frame["gacv"], [1.25, 1.5])

    @pytest.mark.parametrize(
        "name,cls",
        [("csv", CSVExporter), ("JSON", JSONExporter), ("excel", ExcelExporter), ("xlsx", ExcelExporter)],
    )
    def test_get_exporter(self, name, cls):
        """Test format lookup is case-insensitive."""
        assert isinstance(get_exporter(name), cls)

    def test_get_exporter_unknown(self):
        """Test unsupported formats raise ValueError."""
        with pytest.raises(ValueError, match="Unsupported format"):
            get_exporter("parquet")


class TestModelArtifact:
    """Tests for write_model and read_model."""

    def test_reload_evaluates_identically(self, fit, tmp_path):
        """Test a reloaded model reproduces the fitted function."""
        path = write_model(fit, tmp_path / "model.json")
        model = read_model(path)
        points = np.linspace(0.0, 1.0, 17)[:, None]
        np.testing.assert_allclose(model.evaluate(points), fit.model.evaluate(points), atol=1e-12)
        assert model.lam == pytest.approx(1e-3)

    def test_artifact_contents(self, fit, tmp_path):
        """Test the artifact carries theta, trace and rules."""
        path = write_model(fit, tmp_path / "model.json")
        data = json.loads(path.read_text())
        assert {"model", "theta", "converged", "em_trace", "rules", "final_weights"} <= set(data)
        assert len(data["rules"]) == fit.n

    def test_missing_file(self, tmp_path):
        """Test a missing artifact raises IngestionError."""
        with pytest.raises(IngestionError, match="file not found"):
            read_model(tmp_path / "absent.json")

    def test_not_a_model(self, tmp_path):
        """Test arbitrary JSON is rejected."""
        path = tmp_path / "other.json"
        path.write_text('{"hello": 1}')
        with pytest.raises(IngestionError, match="not a model artifact"):
            read_model(path)


class TestEvaluation:
    """Tests for evaluation grids and frames."""

    def test_points_span_subject_means(self, fit):
        """Test the 1-d grid spans the covariate range."""
        points = evaluation_points(fit)
        assert points.shape == (101, 1)
        assert points[0, 0] == pytest.approx(0.05)
        assert points[-1, 0] == pytest.approx(0.95)

    def test_points_2d(self, missing_poisson_dataset):
        """Test a 2-d grid for bivariate covariates."""
        fit = qple_fit(missing_poisson_dataset, 1e-2)
        assert evaluation_points(fit).shape == (41 * 41, 2)

    def test_frame_columns(self, fit):
        """Test the evaluation frame carries f_hat and its mean."""
        frame = evaluation_frame(fit.model, np.array([[0.2], [0.6]]))
        assert list(frame.columns) == ["x1", "f_hat", "mean"]
        np.testing.assert_allclose(frame["mean"], np.exp(frame["f_hat"]))
