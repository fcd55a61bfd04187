"""Tests for the command-line interface."""

import io

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from qple.cli import app

runner = CliRunner()


def read_csv_output(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text))


class TestFitAndEvaluate:
    """Tests for the fit and evaluate commands."""

    def test_fit_writes_artifacts(self, data_files, tmp_path):
        """Test fit writes model.json and evaluation.csv."""
        data, spec = data_files
        out = tmp_path / "fit"
        args = ["fit", str(data), "--lambda", "1e-3", "--spec", str(spec), "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        assert (out / "model.json").exists()
        frame = pd.read_csv(out / "evaluation.csv")
        assert list(frame.columns) == ["x1", "f_hat", "mean"]

    def test_evaluate_reproduces_fit(self, data_files, tmp_path):
        """Test evaluating the saved model matches the fitted grid."""
        data, spec = data_files
        out = tmp_path / "fit"
        runner.invoke(app, ["fit", str(data), "--lambda", "1e-3", "--spec", str(spec), "-o", str(out)])
        grid = pd.read_csv(out / "evaluation.csv")
        points = tmp_path / "points.csv"
        grid[["x1"]].to_csv(points, index=False)

        result = runner.invoke(app, ["evaluate", str(out / "model.json"), str(points)])

        assert result.exit_code == 0, result.output
        frame = read_csv_output(result.stdout)
        np.testing.assert_allclose(frame["f_hat"], grid["f_hat"], atol=1e-12)

    def test_evaluate_to_file(self, data_files, tmp_path):
        """Test evaluate writes a CSV with -o."""
        data, _ = data_files
        out = tmp_path / "fit"
        runner.invoke(app, ["fit", str(data), "--lambda", "1e-2", "-o", str(out)])
        points = tmp_path / "points.csv"
        points.write_text("x1\n0.2\n0.8\n")
        target = tmp_path / "eval" / "values.csv"

        result = runner.invoke(app, ["evaluate", str(out / "model.json"), str(points), "-o", str(target)])

        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(target)) == 2

    def test_library_error_exits_1(self, tmp_path):
        """Test malformed input gives exit code 1 and an error line."""
        data = tmp_path / "bad.csv"
        data.write_text("response,x1\n1,0.5\n")
        result = runner.invoke(app, ["fit", str(data), "--lambda", "0.1", "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "error:" in result.output
        assert "IngestionError" in result.output

    @pytest.mark.parametrize(
        "name,content",
        [
            ("empty.csv", b""),
            ("ragged.csv", b"y,x1\n1,0.5\n2,0.3,0.9\n"),
            ("latin1.csv", b"y,x1\n1,caf\xe9\n"),
        ],
    )
    def test_unreadable_data_exits_1(self, tmp_path, name, content):
        """Test unreadable data files give one error line, not a traceback."""
        data = tmp_path / name
        data.write_bytes(content)
        result = runner.invoke(app, ["fit", str(data), "--lambda", "0.1", "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "error: IngestionError" in result.output

    def test_non_utf8_sidecar_exits_1(self, data_files, tmp_path):
        """Test a sidecar with invalid bytes gives one error line."""
        data, _ = data_files
        spec = tmp_path / "spec.json"
        spec.write_bytes(b'{"0": {"type": "\xff"}}')
        args = ["fit", str(data), "--lambda", "0.1", "--spec", str(spec), "-o", str(tmp_path / "out")]
        result = runner.invoke(app, args)
        assert result.exit_code == 1
        assert "error: IngestionError" in result.output

    def test_bad_family_is_usage_error(self, data_files, tmp_path):
        """Test an unparseable family exits with a usage error."""
        data, _ = data_files
        result = runner.invoke(app, ["fit", str(data), "--lambda", "0.1", "--family", "gamma"])
        assert result.exit_code == 2


class TestTune:
    """Tests for the tune command."""

    def test_gacv_selection(self, data_files, tmp_path):
        """Test tune writes the criterion curve and the selected fit."""
        data, spec = data_files
        out = tmp_path / "tune"
        result = runner.invoke(
            app, ["tune", str(data), "--spec", str(spec), "--lambda-grid", "-4:-1:4", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert "Selected lambda" in result.output
        curve = pd.read_csv(out / "criterion.csv")
        assert list(curve.columns) == ["lambda", "log10_lambda", "gacv"]
        assert len(curve) == 4
        assert (out / "model.json").exists()

    def test_rangacv_is_deterministic(self, data_files, tmp_path):
        """Test equal seeds give byte-identical criterion tables."""
        data, spec = data_files
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            args = ["tune", str(data), "--spec", str(spec), "--criterion", "rangacv", "--replicates", "5"]
            args += ["--lambda-grid", "-4:-1:4", "--seed", "3", "-o", str(out)]
            result = runner.invoke(app, args)
            assert result.exit_code == 0, result.output
            outputs.append((out / "criterion.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_tkl_requires_truth(self, data_files):
        """Test tkl without --truth is a usage error."""
        data, _ = data_files
        result = runner.invoke(app, ["tune", str(data), "--criterion", "tkl"])
        assert result.exit_code == 2

    def test_unknown_criterion(self, data_files):
        """Test an unknown criterion is a usage error."""
        data, _ = data_files
        result = runner.invoke(app, ["tune", str(data), "--criterion", "aic"])
        assert result.exit_code == 2

    def test_malformed_grid(self, data_files):
        """Test a malformed lambda grid is a usage error."""
        data, _ = data_files
        result = runner.invoke(app, ["tune", str(data), "--lambda-grid", "-4:-1"])
        assert result.exit_code == 2

    def test_tkl_with_truth(self, data_files, tmp_path):
        """Test tkl tuning against a truth file."""
        data, _ = data_files
        x = pd.read_csv(data)["x1"]
        truth = tmp_path / "truth.csv"
        pd.DataFrame({"x1": x, "f": np.log(1.0 + x)}).to_csv(truth, index=False)
        out = tmp_path / "tune"
        args = ["tune", str(data), "--criterion", "tkl", "--truth", str(truth)]
        result = runner.invoke(app, args + ["--lambda-grid", "-3:-1:3", "-o", str(out)])
        assert result.exit_code == 0, result.output
        curve = pd.read_csv(out / "criterion.csv")
        assert np.all(curve["tkl"] >= 0.0)


class TestQuad:
    """Tests for the quad command."""

    def test_gauss_normal(self):
        """Test the 3-node Gauss rule for a standard normal."""
        result = runner.invoke(app, ["quad", "normal:0:1", "--nodes", "3"])
        assert result.exit_code == 0, result.output
        frame = read_csv_output(result.stdout)
        np.testing.assert_allclose(frame["node"], [-np.sqrt(3.0), 0.0, np.sqrt(3.0)], atol=1e-10)
        np.testing.assert_allclose(frame["weight"], [1 / 6, 2 / 3, 1 / 6], atol=1e-12)

    def test_malformed_distribution(self):
        """Test a malformed distribution exits 1."""
        result = runner.invoke(app, ["quad", "normal:0"])
        assert result.exit_code == 1
        assert "error:" in result.output


class TestSimulate:
    """Tests for the simulate command."""

    args = ["simulate", "--case", "i", "--n", "30", "--replicates", "2", "--lambda-grid", "-4:-1:4"]
    args += ["--tunings", "tkl", "--nodes", "3"]

    def test_small_run_is_deterministic(self, tmp_path):
        """Test equal seeds give byte-identical comparison tables."""
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = runner.invoke(app, self.args + ["-o", str(out)])
            assert result.exit_code == 0, result.output
            outputs.append((out / "comparison.csv").read_bytes())
        assert outputs[0] == outputs[1]
        frame = pd.read_csv(tmp_path / "a" / "comparison.csv")
        assert set(frame["method"]) == {"full", "qple", "naive"}
        assert len(frame) == 2 * 3

    def test_unknown_tuning_rejected(self):
        """Test invalid scenario options are usage errors."""
        result = runner.invoke(app, ["simulate", "--case", "i", "--tunings", "aic"])
        assert result.exit_code == 2

    @pytest.mark.slow
    def test_node_sweep(self, tmp_path):
        """Test the node sweep table."""
        out = tmp_path / "sweep"
        result = runner.invoke(app, self.args + ["--sweep-nodes", "2,4", "-o", str(out)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out / "sweep.csv")
        assert len(frame) == 4
        assert set(frame["quadrature"]) == {"gauss", "grid"}
