"""Reading datasets and covariate sidecar specs."""

import json
import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd

from .constants import WEIGHT_SUM_TOLERANCE
from .covariates import NormalChainModel
from .exceptions import IngestionError, QPLEError
from .expfam import ExpFamilySpec
from .kernels import KernelSpec
from .models import (
    CovariateObservation,
    Dataset,
    DiscreteCovariate,
    DistributionalCovariate,
    ErrorKind,
    ErrorModel,
    ExactCovariate,
    NoisyCovariate,
    PartiallyMissingCovariate,
)
from .quadrature import IndependentChain, MultivariateNormal, Normal, Uniform

logger = logging.getLogger(__name__)

HEADER_SCHEMA = "header 'y,x1,...,xd' with NA for missing coordinates"
SPEC_TYPES = (
    "exact",
    "normal_error",
    "uniform_error",
    "discrete",
    "normal",
    "uniform",
    "missing_model",
)
# sidecar types whose covariate comes from the sidecar entry rather than the row
_SELF_CONTAINED = ("discrete", "normal", "uniform")


def read_table(path: str | Path) -> pd.DataFrame:
    """Read and validate the response/covariate CSV.

    Raises:
        IngestionError: On an unreadable file, a malformed header or non-numeric cells.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, na_values=["NA"], keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise IngestionError("file is empty", expected=HEADER_SCHEMA) from exc
    except pd.errors.ParserError as exc:
        raise IngestionError(f"unparseable CSV ({exc})", expected=HEADER_SCHEMA) from exc
    except UnicodeDecodeError as exc:
        raise IngestionError(f"file is not UTF-8 ({exc.reason})", expected=HEADER_SCHEMA) from exc
    columns = [str(c).strip() for c in frame.columns]
    expected = ["y"] + [f"x{j}" for j in range(1, len(columns))]
    if len(columns) < 2 or columns != expected:
        raise IngestionError(f"malformed header {','.join(columns)}", expected=HEADER_SCHEMA)
    frame.columns = columns
    try:
        frame = frame.astype(float)
    except ValueError as exc:
        raise IngestionError(f"non-numeric value ({exc})", expected=HEADER_SCHEMA) from exc
    if frame["y"].isna().any():
        row = int(np.flatnonzero(frame["y"].isna().to_numpy())[0])
        raise IngestionError("response is missing", row=row)
    return frame


def read_sidecar(path: str | Path | None) -> dict[str, dict]:
    """Sidecar JSON: subject index (as a string) or "default" to observation spec."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"sidecar not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"sidecar is not valid JSON ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise IngestionError(f"sidecar is not UTF-8 ({exc.reason})") from exc
    if not isinstance(data, dict):
        raise IngestionError("sidecar must be a JSON object keyed by subject index")
    for key in data:
        if key != "default" and not re.fullmatch(r"\d+", key):
            raise IngestionError(f"sidecar key {key!r} is not a subject index or 'default'")
    return data


def _vector(value: object, dim: int, name: str, row: int) -> np.ndarray:
    array = np.atleast_1d(np.asarray(value, dtype=float))
    if array.size == 1 and dim > 1:
        array = np.full(dim, float(array[0]))
    if array.shape != (dim,):
        raise IngestionError(f"'{name}' must have {dim} entries", row=row)
    return array


class DatasetReader:
    """Resolve CSV rows and sidecar specs into covariate observations.

    Subjects with equal error specs share one :class:`ErrorModel`, and all
    ``missing_model`` subjects with equal options share one covariate model,
    so their nuisance parameters are estimated jointly.
    """

    def __init__(self, family: ExpFamilySpec, kernel: KernelSpec):
        self.family = family
        self.kernel = kernel
        self._error_models: dict[tuple, ErrorModel] = {}
        self._chains: dict[tuple, NormalChainModel] = {}

    def read(self, data_path: str | Path, spec_path: str | Path | None = None) -> Dataset:
        """Load a dataset.

        Raises:
            IngestionError: On malformed input.
        """
        frame = read_table(data_path)
        specs = read_sidecar(spec_path)
        dim = frame.shape[1] - 1
        x = frame.iloc[:, 1:].to_numpy()
        y = frame["y"].to_numpy()
        bad = np.flatnonzero(~self.family.in_support(y))
        if len(bad):
            raise IngestionError(
                f"response {y[bad[0]]:g} outside the {self.family.label} support", row=int(bad[0])
            )
        for key in specs:
            if key != "default" and int(key) >= len(frame):
                raise IngestionError(f"sidecar refers to subject {key} but only {len(frame)} rows exist")

        default = specs.get("default", {"type": "exact"})
        observations = [
            self._observation(x[i], specs.get(str(i), default), dim, i) for i in range(len(frame))
        ]
        logger.info("Read %d subjects with %d covariates from %s", len(frame), dim, data_path)
        return Dataset(y, observations, self.family, self.kernel)

    def _observation(self, x: np.ndarray, spec: dict, dim: int, row: int) -> CovariateObservation:
        kind = spec.get("type")
        if kind not in SPEC_TYPES:
            raise IngestionError(f"unknown spec type {kind!r}", row=row, expected=" | ".join(SPEC_TYPES))
        if kind not in _SELF_CONTAINED and kind != "missing_model" and np.isnan(x).any():
            raise IngestionError("NA covariate without a missing_model spec", row=row)
        try:
            match kind:
                case "exact":
                    return ExactCovariate(x)
                case "normal_error" | "uniform_error":
                    return NoisyCovariate(x, self._error_model(spec, dim, row))
                case "discrete":
                    return self._discrete(spec, dim, row)
                case "normal":
                    return self._normal(spec, dim, row)
                case "uniform":
                    low = _vector(spec["low"], dim, "low", row)
                    high = _vector(spec["high"], dim, "high", row)
                    law = IndependentChain(tuple(Uniform(a, b) for a, b in zip(low, high)))
                    return DistributionalCovariate(law)
                case _:
                    if not np.isnan(x).any():
                        return ExactCovariate(x)
                    return PartiallyMissingCovariate(x, self._chain(spec, dim, row))
        except KeyError as exc:
            raise IngestionError(f"spec type {kind!r} lacks field {exc}", row=row) from exc
        except IngestionError:
            raise
        except (QPLEError, ValueError) as exc:
            raise IngestionError(str(exc), row=row) from exc

    def _error_model(self, spec: dict, dim: int, row: int) -> ErrorModel:
        kind = ErrorKind.NORMAL if spec["type"] == "normal_error" else ErrorKind.UNIFORM
        scale = _vector(spec["sigma"] if kind == ErrorKind.NORMAL else spec["delta"], dim, "scale", row)
        if np.any(scale <= 0):
            raise IngestionError("error scale must be positive", row=row)
        known = bool(spec.get("known", True))
        key = (kind, tuple(scale), known)
        if key not in self._error_models:
            self._error_models[key] = ErrorModel(kind, scale, known)
        return self._error_models[key]

    def _discrete(self, spec: dict, dim: int, row: int) -> DiscreteCovariate:
        values = np.asarray(spec["values"], dtype=float).reshape(len(spec["values"]), -1)
        probs = np.asarray(spec["probs"], dtype=float)
        if values.shape[1] != dim or len(probs) != len(values):
            raise IngestionError("discrete values and probs do not match the covariate dimension", row=row)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise IngestionError(f"discrete probs sum to {probs.sum():.6g}, not 1", row=row)
        return DiscreteCovariate(values, probs)

    def _normal(self, spec: dict, dim: int, row: int) -> DistributionalCovariate:
        mean = _vector(spec["mean"], dim, "mean", row)
        if "cov" in spec:
            return DistributionalCovariate(MultivariateNormal(mean, np.asarray(spec["cov"], dtype=float)))
        sd = _vector(spec["sd"], dim, "sd", row)
        if dim == 1:
            return DistributionalCovariate(Normal(float(mean[0]), float(sd[0])))
        return DistributionalCovariate(IndependentChain(tuple(Normal(m, s) for m, s in zip(mean, sd))))

    def _chain(self, spec: dict, dim: int, row: int) -> NormalChainModel:
        if spec.get("model", "normal_chain") != "normal_chain":
            raise IngestionError(
                f"unknown covariate model {spec['model']!r}", row=row, expected="normal_chain"
            )
        # sidecar coordinates are 1-based like the x1..xd columns
        fixed = tuple(int(j) - 1 for j in spec.get("fixed", []))
        binary = tuple(int(j) - 1 for j in spec.get("binary", []))
        key = (fixed, binary)
        if key not in self._chains:
            self._chains[key] = NormalChainModel(dim, fixed, binary)
        return self._chains[key]


def read_dataset(
    data_path: str | Path,
    spec_path: str | Path | None,
    family: ExpFamilySpec,
    kernel: KernelSpec,
) -> Dataset:
    return DatasetReader(family, kernel).read(data_path, spec_path)


def read_points(path: str | Path) -> np.ndarray:
    """Evaluation points from a CSV with columns x1..xd."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestionError(f"unreadable points file ({exc})", expected="x1,...,xd") from exc
    expected = [f"x{j}" for j in range(1, frame.shape[1] + 1)]
    if list(frame.columns) != expected:
        raise IngestionError(f"malformed header {','.join(map(str, frame.columns))}", expected="x1,...,xd")
    return frame.to_numpy(dtype=float)
