"""Reproducing kernels, null-space bases and Gram assembly.

Kernels operate on covariates already mapped to the unit cube by a
:class:`CovariateScaler`. The cubic smoothing-spline kernel is the
Bernoulli-polynomial form on [0, 1] with null space {1, x - 1/2}.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Self

import numpy as np

from .constants import DOMAIN_TOLERANCE, SCALER_MARGIN
from .exceptions import ContractError, DegenerateDesignError, DomainError

logger = logging.getLogger(__name__)


def as_points(points: np.ndarray | list) -> np.ndarray:
    """Coerce to a 2-D float array of shape (n, d); 1-D input is one coordinate."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Kernel points must have finite coordinates")
    return arr


def _k2(x: np.ndarray) -> np.ndarray:
    return ((x - 0.5) ** 2 - 1.0 / 12.0) / 2.0


def _k4(x: np.ndarray) -> np.ndarray:
    u = x - 0.5
    return (u**4 - u**2 / 2.0 + 7.0 / 240.0) / 24.0


def _unit_interval(x: np.ndarray) -> np.ndarray:
    if np.any(x < -DOMAIN_TOLERANCE) or np.any(x > 1.0 + DOMAIN_TOLERANCE):
        bad = x[(x < -DOMAIN_TOLERANCE) | (x > 1.0 + DOMAIN_TOLERANCE)]
        raise DomainError(
            f"Cubic spline kernel requires points in [0, 1]; got {bad.flat[0]:.6g}",
            value=float(bad.flat[0]),
        )
    return np.clip(x, 0.0, 1.0)


def _cubic_rk(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    s = _unit_interval(s)[:, None]
    t = _unit_interval(t)[None, :]
    return _k2(s) * _k2(t) - _k4(np.abs(s - t))


class KernelSpec(ABC):
    """A reproducing kernel with its null space."""

    kind: str = ""
    dim: int | None = None

    @abstractmethod
    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Kernel matrix K(s_a, t_b) for point arrays s (n, d) and t (m, d)."""

    def null_columns(self, points: np.ndarray) -> list[tuple[tuple, np.ndarray]]:
        """Non-constant null-space functions as (key, column) pairs."""
        return []

    @abstractmethod
    def to_dict(self) -> dict:
        pass

    def check_dim(self, points: np.ndarray) -> None:
        if self.dim is not None and points.shape[1] != self.dim:
            raise ContractError(
                f"Kernel '{self.kind}' needs {self.dim}-dimensional points, got {points.shape[1]}"
            )


@dataclass(frozen=True)
class CubicSpline(KernelSpec):
    """Cubic smoothing spline on the unit interval."""

    kind = "cubic"
    dim = 1

    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return _cubic_rk(s[:, 0], t[:, 0])

    def null_columns(self, points: np.ndarray) -> list[tuple[tuple, np.ndarray]]:
        _unit_interval(points[:, 0])
        return [(("linear", 0), points[:, 0] - 0.5)]

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class ThinPlate2D(KernelSpec):
    """Second-order thin-plate spline in two dimensions, E(r) = r^2 log r."""

    kind = "tps"
    dim = 2

    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        r2 = np.sum((s[:, None, :] - t[None, :, :]) ** 2, axis=-1)
        out = np.zeros_like(r2)
        positive = r2 > 0.0
        out[positive] = 0.5 * r2[positive] * np.log(r2[positive])
        return out

    def null_columns(self, points: np.ndarray) -> list[tuple[tuple, np.ndarray]]:
        return [(("linear", 0), points[:, 0]), (("linear", 1), points[:, 1])]

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class GaussianRBF(KernelSpec):
    """Gaussian kernel exp(-|s - t|^2 / (2 h^2)); null space is the constants."""

    bandwidth: float = 0.2
    kind = "rbf"

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise DomainError(f"RBF bandwidth must be positive, got {self.bandwidth}")

    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        r2 = np.sum((s[:, None, :] - t[None, :, :]) ** 2, axis=-1)
        return np.exp(-r2 / (2.0 * self.bandwidth**2))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class CubicProduct(KernelSpec):
    """Tensor product of two unit-interval cubic kernels (smooth interaction)."""

    kind = "product"
    dim = 2

    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return _cubic_rk(s[:, 0], t[:, 0]) * _cubic_rk(s[:, 1], t[:, 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class KernelBlock:
    """A kernel restricted to a subset of covariate coordinates."""

    kernel: KernelSpec
    coords: tuple[int, ...]

    def restrict(self, points: np.ndarray) -> np.ndarray:
        if max(self.coords) >= points.shape[1]:
            raise ContractError(
                f"Block coordinates {self.coords} exceed covariate dimension {points.shape[1]}"
            )
        return points[:, list(self.coords)]

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "coords": list(self.coords)}


@dataclass(frozen=True)
class SSANOVA(KernelSpec):
    """Tensor-sum kernel sum_b theta_b K_b plus parametric linear terms."""

    blocks: tuple[KernelBlock, ...] = ()
    thetas: tuple[float, ...] = ()
    linear: tuple[int, ...] = ()
    kind = "ssanova"

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ContractError("SS-ANOVA kernel needs at least one block")
        if len(self.thetas) != len(self.blocks):
            raise ContractError(
                f"Got {len(self.thetas)} block weights for {len(self.blocks)} blocks"
            )
        if any(not theta > 0 for theta in self.thetas):
            raise DomainError("SS-ANOVA block weights must be positive")

    def cross(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return sum(
            theta * block.kernel.cross(block.restrict(s), block.restrict(t))
            for block, theta in zip(self.blocks, self.thetas)
        )

    def null_columns(self, points: np.ndarray) -> list[tuple[tuple, np.ndarray]]:
        columns: dict[tuple, np.ndarray] = {}
        for block in self.blocks:
            sub = block.restrict(points)
            for (name, local), column in block.kernel.null_columns(sub):
                columns.setdefault((name, block.coords[local]), column)
        for coord in self.linear:
            if coord >= points.shape[1]:
                raise ContractError(f"Linear coordinate {coord} exceeds covariate dimension")
            columns.setdefault(("linear", coord), points[:, coord] - 0.5)
        return list(columns.items())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "blocks": [block.to_dict() for block in self.blocks],
            "thetas": list(self.thetas),
            "linear": list(self.linear),
        }


def gram(points: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Symmetric Gram matrix K(z_a, z_b)."""
    pts = as_points(points)
    k.check_dim(pts)
    matrix = k.cross(pts, pts)
    return (matrix + matrix.T) / 2.0


def cross_gram(query: np.ndarray, nodes: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Rectangular kernel matrix between query points and nodes."""
    q = as_points(query)
    z = as_points(nodes)
    k.check_dim(q)
    return k.cross(q, z)


def null_design(points: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Null-space functions evaluated at points, constant column first."""
    pts = as_points(points)
    k.check_dim(pts)
    return np.column_stack([np.ones(len(pts))] + [column for _, column in k.null_columns(pts)])


def null_basis(points: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Null-space design S with a leading column of ones.

    The rank is checked whenever there are at least as many points as
    null-space functions.

    Raises:
        DegenerateDesignError: If S is rank deficient.
    """
    basis = null_design(points, k)
    n, p = basis.shape
    if n >= p:
        rank = int(np.linalg.matrix_rank(basis))
        if rank < p:
            raise DegenerateDesignError(rank, p, n)
    return basis


def ssanova_gram(points: np.ndarray, blocks: list[KernelBlock], thetas: list[float]) -> np.ndarray:
    """Gram matrix of the weighted tensor sum of block kernels."""
    return gram(points, SSANOVA(tuple(blocks), tuple(float(t) for t in thetas)))


_SIMPLE_KERNELS = {"cubic": CubicSpline, "tps": ThinPlate2D, "product": CubicProduct}


def kernel_from_dict(data: dict) -> KernelSpec:
    """Rebuild a kernel from its ``to_dict`` form."""
    kind = data["kind"]
    if kind in _SIMPLE_KERNELS:
        return _SIMPLE_KERNELS[kind]()
    if kind == "rbf":
        return GaussianRBF(float(data["bandwidth"]))
    if kind == "ssanova":
        blocks = tuple(
            KernelBlock(kernel_from_dict(block["kernel"]), tuple(block["coords"]))
            for block in data["blocks"]
        )
        return SSANOVA(blocks, tuple(data["thetas"]), tuple(data.get("linear", [])))
    raise DomainError(f"Unknown kernel kind '{kind}'")


def _parse_coords(text: str) -> tuple[int, ...]:
    try:
        coords = tuple(int(part) - 1 for part in text.split("."))
    except ValueError as exc:
        raise DomainError(f"Invalid coordinate list '{text}'") from exc
    if any(c < 0 for c in coords):
        raise DomainError(f"Coordinates are 1-based, got '{text}'")
    return coords


def parse_kernel(text: str) -> KernelSpec:
    """Parse a kernel flag.

    Forms: ``cubic``, ``tps``, ``rbf:h``, and
    ``ssanova:cubic@1+cubic@2+product@1.2|theta=1,1,0.5|linear=3``
    with 1-based coordinates.
    """
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name in _SIMPLE_KERNELS and not arg:
        return _SIMPLE_KERNELS[name]()
    if name == "rbf":
        try:
            return GaussianRBF(float(arg) if arg else 0.2)
        except ValueError as exc:
            raise DomainError(f"Invalid RBF bandwidth '{arg}'") from exc
    if name == "ssanova" and arg:
        parts = arg.split("|")
        blocks = []
        for item in parts[0].split("+"):
            kind, _, coords = item.partition("@")
            if kind not in _SIMPLE_KERNELS and not kind.startswith("rbf"):
                raise DomainError(f"Unknown SS-ANOVA block kernel '{kind}'")
            blocks.append(KernelBlock(parse_kernel(kind.replace("~", ":")), _parse_coords(coords)))
        thetas: tuple[float, ...] = tuple(1.0 for _ in blocks)
        linear: tuple[int, ...] = ()
        for option in parts[1:]:
            key, _, value = option.partition("=")
            if key == "theta":
                thetas = tuple(float(v) for v in value.split(","))
            elif key == "linear":
                linear = _parse_coords(value)
            else:
                raise DomainError(f"Unknown SS-ANOVA option '{key}'")
        return SSANOVA(tuple(blocks), thetas, linear)
    raise DomainError(f"Unknown kernel '{text}'. Expected cubic, tps, rbf:h or ssanova:...")


@dataclass
class CovariateScaler:
    """Per-coordinate affine map of raw covariates onto the unit cube."""

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(
        cls,
        points: np.ndarray,
        margin: float = SCALER_MARGIN,
        domain: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> Self:
        """Fit on a cloud of points, widened by ``margin`` times the range.

        Args:
            points: Raw covariate points (n, d)
            margin: Relative padding on each side
            domain: Optional raw bounds that must also be covered
        """
        pts = as_points(points)
        low = pts.min(axis=0)
        high = pts.max(axis=0)
        if domain is not None:
            low = np.minimum(low, np.asarray(domain[0], dtype=float))
            high = np.maximum(high, np.asarray(domain[1], dtype=float))
        span = high - low
        pad = np.where(span > 0, margin * span, 0.5)
        return cls(low - pad, high + pad)

    @classmethod
    def identity(cls, dim: int) -> Self:
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return len(self.low)

    def transform(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        if pts.shape[1] != self.dim:
            raise ContractError(f"Expected {self.dim} covariate coordinates, got {pts.shape[1]}")
        return (pts - self.low) / (self.high - self.low)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return as_points(scaled) * (self.high - self.low) + self.low

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(np.asarray(data["low"], dtype=float), np.asarray(data["high"], dtype=float))
