"""Test functions of the simulation cases."""

import numpy as np

from ..expfam import ExpFamilySpec
from ..kernels import CubicSpline, KernelSpec, ThinPlate2D, as_points
from .constants import CASE_TRIALS
from .models import Case


def franke(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Franke's principal test function on the unit square."""
    a, b = 9.0 * np.asarray(x1, dtype=float), 9.0 * np.asarray(x2, dtype=float)
    return (
        0.75 * np.exp(-((a - 2) ** 2 + (b - 2) ** 2) / 4.0)
        + 0.75 * np.exp(-((a + 1) ** 2) / 49.0 - (b + 1) ** 2 / 10.0)
        + 0.5 * np.exp(-((a - 7) ** 2 + (b - 3) ** 2) / 4.0)
        - 0.2 * np.exp(-((a - 4) ** 2) - (b - 7) ** 2)
    )


def test_function(case: Case | str, x: np.ndarray) -> np.ndarray:
    """Success probability (binomial cases) or Poisson mean at x."""
    case = Case(case)
    points = as_points(x)
    if case == Case.FRANKE_BINOMIAL:
        return (franke(points[:, 0], points[:, 1]) + 0.198) / 1.24
    if case == Case.FRANKE_POISSON:
        return 15.0 * franke(points[:, 0], points[:, 1]) + 3.0
    u = points[:, 0]
    if case == Case.I:
        return 0.63 * u * np.cos(2 * np.pi * u) + 0.36
    if case == Case.II:
        return 16.0 * np.exp(-18.0 * (u - 0.4) ** 2) - 5.0 * np.exp(-7.0 * (u - 0.5) ** 2) + 5.0
    return 1e6 * u**11 * (1 - u) ** 6 + 1e4 * u**3 * (1 - u) ** 10 + 2.0


test_function.__test__ = False  # not a pytest test


def family_for(case: Case | str) -> ExpFamilySpec:
    case = Case(case)
    if case.value in CASE_TRIALS:
        return ExpFamilySpec.binomial(CASE_TRIALS[case.value])
    return ExpFamilySpec.poisson()


def kernel_for(case: Case | str) -> KernelSpec:
    return ThinPlate2D() if Case(case).is_bivariate else CubicSpline()


def mean_response(case: Case | str, x: np.ndarray) -> np.ndarray:
    """E[y | x]: trials times probability, or the Poisson mean."""
    family = family_for(case)
    value = test_function(case, x)
    return family.trials * value if family.family.value == "binomial" else value


def natural_parameter(case: Case | str, x: np.ndarray) -> np.ndarray:
    """True f*(x) on the natural-parameter scale."""
    return family_for(case).link(mean_response(case, x))


class TrueFunction:
    """Picklable f* for one case."""

    def __init__(self, case: Case | str):
        self.case = Case(case)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return natural_parameter(self.case, x)
