"""
Piecewise-constant force of infection estimated directly from serology.

The probability of being immune at age a under the stationary MSIR model is

    pi(a) = 1 - exp(-integral_A^a lambda(s) ds)

with lambda constant on each class of an AgeGrid. Non-negativity of lambda is
enforced through lambda = exp(theta), which also keeps pi non-decreasing.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from serocontact.data_model import AgeGrid, SerologyDataset
from serocontact.errors import ConvergenceError, DomainError
from serocontact.schemas import FoiClassOut, FoiReport

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
ZERO_THRESHOLD = 1e-8
THETA_BOUNDS = (-40.0, np.log(50.0))
GRADIENT_TOL = 1e-4

COVERAGE_OBSERVED = "observed"
COVERAGE_EMPTY = "no_observations"
COVERAGE_BEYOND = "beyond_data"


@dataclass(frozen=True, eq=False)
class PiecewiseFoi:
    """Force of infection lambda_j (per year) on each class of ``grid``.

    Exposure starts at ``maternal_antibody_age`` (the grid's lower edge when
    not given); ages above the grid's upper edge are outside the domain.
    """
    grid: AgeGrid
    lambdas: np.ndarray
    maternal_antibody_age: Optional[float] = None

    def __post_init__(self):
        lambdas = np.array(self.lambdas, dtype=float)
        if lambdas.shape != (self.grid.n_classes,):
            raise DomainError(f"expected {self.grid.n_classes} force-of-infection values, got {lambdas.size}")
        if np.any(~np.isfinite(lambdas)) or np.any(lambdas < 0):
            raise DomainError("force of infection must be finite and non-negative")
        lambdas.setflags(write=False)
        object.__setattr__(self, "lambdas", lambdas)
        if self.maternal_antibody_age is None:
            object.__setattr__(self, "maternal_antibody_age", self.grid.lower)

    @property
    def onset(self) -> float:
        return float(self.maternal_antibody_age)

    def exposure(self, ages: np.ndarray) -> np.ndarray:
        return exposure_matrix(self.grid, ages, self.onset)

    def cumulative_hazard(self, ages: np.ndarray) -> np.ndarray:
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        if np.any(ages > self.grid.upper + 1e-12):
            raise DomainError(f"age {ages.max():g} exceeds the upper age {self.grid.upper:g}")
        return self.exposure(ages) @ self.lambdas


@dataclass(frozen=True)
class PrevalenceCurve:
    """pi(a) for a fitted or assumed PiecewiseFoi."""
    foi: PiecewiseFoi

    def __call__(self, ages) -> np.ndarray:
        return 1.0 - np.exp(-self.foi.cumulative_hazard(ages))

    def susceptible(self, ages) -> np.ndarray:
        return np.exp(-self.foi.cumulative_hazard(ages))


@dataclass
class FoiFit:
    foi: PiecewiseFoi
    loglik: float
    converged: bool
    coverage: List[str]
    at_zero: np.ndarray
    clamp_events: int = 0
    iterations: int = 0
    n_subjects: int = 0
    n_excluded: int = 0
    trace: List[float] = field(default_factory=list)

    def to_report(self) -> FoiReport:
        grid = self.foi.grid
        classes = [
            FoiClassOut(lower=float(lo), upper=float(hi), foi=float(lam), coverage=cov, at_zero=bool(z))
            for lo, hi, lam, cov, z in zip(grid.breakpoints[:-1], grid.breakpoints[1:],
                                           self.foi.lambdas, self.coverage, self.at_zero)
        ]
        return FoiReport(n_subjects=self.n_subjects, n_excluded=self.n_excluded, loglik=self.loglik,
                         converged=self.converged, clamp_events=self.clamp_events, classes=classes)


def exposure_matrix(grid: AgeGrid, ages: np.ndarray, onset: float) -> np.ndarray:
    """Years spent in each class between ``onset`` and each age; shape (n, J)."""
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    lo = np.maximum(grid.breakpoints[:-1], onset)
    hi = np.maximum(grid.breakpoints[1:], onset)
    return np.clip(ages[:, None] - lo[None, :], 0.0, (hi - lo)[None, :])


def prevalence_at_age(foi: PiecewiseFoi, age: float) -> float:
    """Probability of being immune at ``age``; 0 at or below the onset age."""
    if age > foi.grid.upper:
        raise DomainError(f"age {age:g} exceeds the upper age {foi.grid.upper:g}")
    if age <= foi.onset:
        return 0.0
    return float(PrevalenceCurve(foi)(age)[0])


def susceptible_profile(foi: PiecewiseFoi, ages) -> np.ndarray:
    """x(a) = 1 - pi(a) = exp(-integral of lambda)."""
    return PrevalenceCurve(foi).susceptible(ages)


def _clamped_probabilities(eta: np.ndarray) -> Tuple[np.ndarray, int]:
    pi = -np.expm1(-eta)
    clamped = np.clip(pi, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return clamped, int(np.count_nonzero(clamped != pi))


def _loglik_from_eta(eta: np.ndarray, status: np.ndarray) -> Tuple[float, int]:
    pi, n_clamped = _clamped_probabilities(eta)
    return float(np.sum(status * np.log(pi) + (1 - status) * np.log1p(-pi))), n_clamped


def bernoulli_loglik(foi: PiecewiseFoi, data: SerologyDataset) -> float:
    """Sum of y log pi(a) + (1-y) log(1-pi(a)) with pi clamped to [1e-12, 1-1e-12]."""
    if len(data) == 0:
        raise DomainError("cannot evaluate the likelihood of an empty serology dataset")
    value, _ = _loglik_from_eta(foi.cumulative_hazard(data.ages), data.status)
    return value


def loglik_gradient(foi: PiecewiseFoi, data: SerologyDataset) -> np.ndarray:
    """Analytic derivative of the Bernoulli log-likelihood with respect to lambda."""
    exposure = foi.exposure(data.ages)
    pi, _ = _clamped_probabilities(exposure @ foi.lambdas)
    y = data.status
    return exposure.T @ (y * (1.0 - pi) / pi - (1.0 - y))


def data_coverage(grid: AgeGrid, ages: np.ndarray) -> List[str]:
    """Per-class flag: observed, no_observations, or beyond_data (above the oldest subject)."""
    if ages.size == 0:
        return [COVERAGE_BEYOND] * grid.n_classes
    oldest = ages.max()
    idx = grid.locate(ages)
    counts = np.bincount(idx[idx >= 0], minlength=grid.n_classes)
    flags = []
    for j in range(grid.n_classes):
        if counts[j] > 0:
            flags.append(COVERAGE_OBSERVED)
        elif grid.breakpoints[j] >= oldest:
            flags.append(COVERAGE_BEYOND)
        else:
            flags.append(COVERAGE_EMPTY)
    return flags


def _starting_theta(grid: AgeGrid, data: SerologyDataset) -> np.ndarray:
    idx = grid.locate(data.ages)
    overall = float(np.clip(data.status.mean(), 0.01, 0.99))
    start = np.empty(grid.n_classes)
    for j in range(grid.n_classes):
        in_class = idx == j
        p_hat = float(np.clip(data.status[in_class].mean(), 0.01, 0.99)) if in_class.any() else overall
        start[j] = -np.log1p(-p_hat) / grid.widths[j]
    return np.log(start)


def fit_piecewise_foi(data: SerologyDataset, grid: AgeGrid,
                      maternal_antibody_age: Optional[float] = None,
                      max_iter: int = 2000) -> FoiFit:
    """
    Maximum likelihood piecewise-constant force of infection.

    Classes above the oldest observed age carry no information; they are
    pinned to the last identifiable value and flagged ``beyond_data``.

    Args:
        data: Serology sample (ages inside the grid)
        grid: Age classes on which lambda is constant
        maternal_antibody_age: Exposure onset, defaults to the grid's lower edge
        max_iter: Iteration cap for each optimizer stage

    Returns:
        FoiFit: lambda estimates, log-likelihood and diagnostics

    Raises:
        DomainError: If the dataset is empty or ages fall outside the grid
        ConvergenceError: If the optimizer stops away from a stationary point
    """
    if len(data) == 0:
        raise DomainError("cannot fit the force of infection to an empty serology dataset")
    onset = grid.lower if maternal_antibody_age is None else maternal_antibody_age
    if np.any(data.ages > grid.upper) or np.any(data.ages < grid.lower):
        raise DomainError("serology ages must lie inside the age grid")

    coverage = data_coverage(grid, data.ages)
    free = np.array([c != COVERAGE_BEYOND for c in coverage])
    exposure = exposure_matrix(grid, data.ages, onset)[:, free]
    y = data.status.astype(float)
    trace: List[float] = []

    def negloglik(theta):
        value, _ = _loglik_from_eta(exposure @ np.exp(theta), y)
        trace.append(-value)
        return -value

    def gradient(theta):
        lam = np.exp(theta)
        pi, _ = _clamped_probabilities(exposure @ lam)
        return -(exposure.T @ (y * (1.0 - pi) / pi - (1.0 - y))) * lam

    theta0 = np.clip(_starting_theta(grid, data)[free], *THETA_BOUNDS)
    simplex = minimize(negloglik, theta0, method="Nelder-Mead",
                       options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10})
    refined = minimize(negloglik, np.clip(simplex.x, *THETA_BOUNDS), jac=gradient, method="L-BFGS-B",
                       bounds=[THETA_BOUNDS] * int(free.sum()),
                       options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-15})
    best = refined if refined.fun <= simplex.fun else simplex

    lam_free = np.exp(best.x)
    # KKT: a component at zero is optimal when the likelihood cannot grow by raising it
    raw_gradient = -gradient(best.x) / lam_free
    at_zero_free = (lam_free < ZERO_THRESHOLD) | ((lam_free < 1e-6) & (raw_gradient <= 0))
    lam_free = np.where(at_zero_free, 0.0, lam_free)

    scaled = np.abs(raw_gradient * lam_free) / (1.0 + abs(best.fun))
    converged = bool(np.all(scaled[~at_zero_free] < GRADIENT_TOL))
    if not converged:
        raise ConvergenceError(
            f"force-of-infection fit did not converge (max scaled gradient {scaled.max():.2e})",
            best_iterate=lam_free, trace=trace,
        )

    lambdas = np.zeros(grid.n_classes)
    lambdas[free] = lam_free
    at_zero = np.zeros(grid.n_classes, dtype=bool)
    at_zero[free] = at_zero_free
    if not free.all():
        last_identified = lambdas[np.flatnonzero(free)[-1]] if free.any() else 0.0
        lambdas[~free] = last_identified
        at_zero[~free] = last_identified == 0.0
        logger.info("%d age class(es) beyond the oldest subject; lambda fixed at %.4g",
                    int((~free).sum()), last_identified)

    foi = PiecewiseFoi(grid, lambdas, onset)
    eta = foi.exposure(data.ages) @ lambdas
    loglik, n_clamped = _loglik_from_eta(eta, y)
    if n_clamped:
        logger.warning("%d prevalence values clamped to [%g, 1-%g]", n_clamped, PROB_CLAMP, PROB_CLAMP)
    logger.debug("foi fit: lambda=%s loglik=%.6f", np.round(lambdas, 6).tolist(), loglik)
    return FoiFit(foi=foi, loglik=loglik, converged=converged, coverage=coverage, at_zero=at_zero,
                  clamp_events=n_clamped, iterations=int(simplex.nit + refined.nit),
                  n_subjects=len(data), n_excluded=data.n_excluded, trace=trace)


def plotting_series(foi: PiecewiseFoi, step: float = 0.1) -> pd.DataFrame:
    """Tidy (age, prevalence, foi) series from 0 to the grid's upper edge."""
    if step <= 0:
        raise DomainError("plotting step must be positive")
    n_steps = int(np.floor(foi.grid.upper / step + 1e-9))
    ages = np.round(np.arange(n_steps + 1) * step, 10)
    band = foi.grid.locate(ages)
    lam = np.where((band >= 0) & (ages > foi.onset), foi.lambdas[np.maximum(band, 0)], 0.0)
    return pd.DataFrame({"age": ages, "prevalence": PrevalenceCurve(foi)(ages), "foi": lam})
