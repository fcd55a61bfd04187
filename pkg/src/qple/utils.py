"""Utility functions for QPLE fitting."""

import numpy as np

from .constants import LAMBDA_GRID_COUNT, LAMBDA_GRID_LOG10_HI, LAMBDA_GRID_LOG10_LO
from .exceptions import ContractError


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum of each contiguous segment [offsets[i], offsets[i+1])."""
    return np.add.reduceat(np.asarray(values, dtype=float), offsets[:-1])


def segment_logsumexp(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Stable log-sum-exp of each contiguous segment."""
    values = np.asarray(values, dtype=float)
    starts = offsets[:-1]
    peak = np.maximum.reduceat(values, starts)
    sizes = np.diff(offsets)
    shifted = np.exp(values - np.repeat(peak, sizes))
    return peak + np.log(np.add.reduceat(shifted, starts))


def segment_softmax(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Normalize exp(values) within each segment."""
    sizes = np.diff(offsets)
    return np.exp(values - np.repeat(segment_logsumexp(values, offsets), sizes))


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))


def lambda_grid(
    lo: float = LAMBDA_GRID_LOG10_LO,
    hi: float = LAMBDA_GRID_LOG10_HI,
    count: int = LAMBDA_GRID_COUNT,
) -> np.ndarray:
    """Log-spaced grid of smoothing parameters, ascending."""
    if count < 1 or hi < lo:
        raise ContractError(f"Invalid lambda grid {lo}:{hi}:{count}")
    return np.logspace(lo, hi, count)


def parse_lambda_grid(text: str) -> np.ndarray:
    """Parse ``lo:hi:count`` in log10 units."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ContractError(f"Lambda grid must look like lo:hi:count, got '{text}'")
    try:
        return lambda_grid(float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ContractError(f"Lambda grid must look like lo:hi:count, got '{text}'") from exc


def argmin_prefer_larger(values: np.ndarray) -> int:
    """Index of the minimum of finite values; ties go to the later (larger lambda) entry."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not np.any(finite):
        raise ContractError("No finite criterion values to minimize")
    best = np.min(values[finite])
    return int(np.flatnonzero(finite & (values == best)).max())
