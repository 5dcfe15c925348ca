"""
Transmission rates from contact rates, proportionality fits to serology, and R0.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.optimize import minimize
from scipy.stats import chi2

from serocontact.contact_surface import ContactRates
from serocontact.data_model import AgeGrid, Demography, SerologyDataset
from serocontact.errors import ConvergenceError, DomainError, FixedPointError
from serocontact.foi_core import PiecewiseFoi, bernoulli_loglik, fit_piecewise_foi
from serocontact.proportionality import ProportionalityModel
from serocontact.schemas import ModelFitOut
from serocontact.waifw_mixing import (
    PENALTY_VALUE,
    WaifwMatrix,
    foi_operator,
    numerical_hessian,
    solve_foi_fixed_point,
    weakly_identified,
)

logger = logging.getLogger(__name__)

POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000
PARAM_DIVERGENCE = 50.0


@dataclass(frozen=True, eq=False)
class NextGenMatrix:
    """(N D / L) * width_i * beta_ij, dimensionless."""
    grid: AgeGrid
    values: np.ndarray


def apply_proportionality(model: ProportionalityModel, params: Sequence[float], rates: ContactRates,
                          grid: Optional[AgeGrid] = None) -> WaifwMatrix:
    """beta = q * c element-wise on the grid of ``rates``."""
    if grid is not None and grid != rates.grid:
        raise DomainError("contact rates are not on the requested age grid")
    q = model.q_matrix(params, rates.grid)
    return WaifwMatrix(rates.grid, q * rates.values)


def next_generation_matrix(waifw: WaifwMatrix, demography: Demography) -> NextGenMatrix:
    values = demography.contact_factor * waifw.grid.widths[:, None] * waifw.values
    return NextGenMatrix(waifw.grid, values)


def dominant_eigenvalue(matrix: Union[NextGenMatrix, np.ndarray]) -> float:
    """
    Spectral radius of a non-negative square matrix.

    Power iteration from the vector of ones, refined by shifted inverse
    iteration; a dense eigensolve is used when the two disagree or the power
    iteration does not settle.
    """
    m = np.asarray(matrix.values if isinstance(matrix, NextGenMatrix) else matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("dominant_eigenvalue needs a square matrix")
    if np.any(m < 0):
        raise DomainError("dominant_eigenvalue needs a non-negative matrix")
    if not np.any(m):
        return 0.0

    v = np.ones(m.shape[0])
    estimate = 0.0
    converged = False
    for _ in range(POWER_MAX_ITER):
        w = m @ v
        norm = float(np.max(np.abs(w)))
        if norm == 0.0:
            return 0.0
        if np.all(v > 0):
            # Collatz-Wielandt: min_i (Mv)_i / v_i <= rho <= max_i (Mv)_i / v_i
            ratios = w / v
            lower, upper = float(ratios.min()), float(ratios.max())
            if upper - lower <= POWER_TOL * upper:
                return 0.5 * (lower + upper)
        if abs(norm - estimate) <= POWER_TOL * norm:
            converged = True
            estimate = norm
            v = w / norm
            break
        estimate = norm
        v = w / norm

    if converged:
        shift = estimate * (1.0 + 1e-10)
        try:
            for _ in range(3):
                y = solve(m - shift * np.eye(m.shape[0]), v)
                v = y / np.max(np.abs(y))
            refined = float(np.max(np.abs(m @ v)) / np.max(np.abs(v)))
        except (LinAlgError, ValueError):
            refined = estimate
        if abs(refined - estimate) <= 1e-6 * estimate:
            return refined
    logger.warning("power iteration did not settle; using a dense eigensolve")
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def r0_from_waifw(waifw: WaifwMatrix, demography: Demography) -> float:
    return dominant_eigenvalue(next_generation_matrix(waifw, demography))


# ---------------------------------------------------------------------------
# Proportionality fits
# ---------------------------------------------------------------------------

@dataclass
class ProportionalityFit:
    model: ProportionalityModel
    params: np.ndarray
    waifw: WaifwMatrix
    lambdas: np.ndarray
    loglik: float
    n_obs: int
    r0: float
    converged: bool = True
    weakly_identified: bool = False
    fixed_point_failures: int = 0
    diagnostics: List[str] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    r0_interval: Optional["ProfileInterval"] = None

    @property
    def n_params(self) -> int:
        return self.model.n_params

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + np.log(self.n_obs) * self.n_params

    @property
    def flags(self) -> List[str]:
        flags = list(self.diagnostics)
        if self.weakly_identified:
            flags.append("weakly_identified")
        if self.fixed_point_failures:
            flags.append("fixed_point_failures")
        return flags

    def to_report(self) -> ModelFitOut:
        interval = self.r0_interval
        return ModelFitOut(
            model=self.model.name, family=self.model.family, contact_filter=self.model.contact_filter,
            n_params=self.n_params, params=dict(zip(self.model.param_names, map(float, self.params))),
            loglik=self.loglik, aic=self.aic, bic=self.bic, r0=self.r0,
            r0_lower=interval.lower if interval else None, r0_upper=interval.upper if interval else None,
            r0_ci_one_sided=bool(interval and interval.one_sided), converged=self.converged, flags=self.flags,
        )


class _SerologyObjective:
    """Negative log-likelihood of serology as a function of optimizer coordinates."""

    def __init__(self, model: ProportionalityModel, rates: ContactRates, serology: SerologyDataset,
                 demography: Demography):
        self.model = model
        self.rates = rates
        self.serology = serology
        self.demography = demography
        self.failures = 0
        self.trace: List[float] = []

    def lambdas(self, params: np.ndarray) -> np.ndarray:
        waifw = apply_proportionality(self.model, params, self.rates)
        return solve_foi_fixed_point(waifw, self.demography)

    def negloglik_params(self, params: np.ndarray) -> float:
        if np.any(~np.isfinite(params)):
            return PENALTY_VALUE
        try:
            lambdas = self.lambdas(params)
        except (FixedPointError, DomainError):
            self.failures += 1
            return PENALTY_VALUE
        foi = PiecewiseFoi(self.rates.grid, lambdas, self.demography.maternal_antibody_age)
        value = -bernoulli_loglik(foi, self.serology)
        self.trace.append(value)
        return value

    def __call__(self, theta: np.ndarray) -> float:
        return self.negloglik_params(self.model.from_optimizer(theta))


def _least_squares_scale(rates: ContactRates, serology: SerologyDataset, demography: Demography) -> float:
    """Constant q whose force of infection best matches the piecewise estimate."""
    grid = rates.grid
    try:
        target = fit_piecewise_foi(serology, grid, demography.maternal_antibody_age).foi.lambdas
    except ConvergenceError:
        target = np.full(grid.n_classes, 0.1)
    # lambda is linear in q once the x-differences are held at the target
    unit = foi_operator(rates.values, target, grid.widths, demography.contact_factor)
    denom = float(unit @ unit)
    scale = float(unit @ target) / denom if denom > 0 else 0.1
    return scale if scale > 0 else 0.1


def fit_proportionality(model: ProportionalityModel, rates: ContactRates, serology: SerologyDataset,
                        demography: Demography, max_iter: int = 4000) -> ProportionalityFit:
    """
    Maximum likelihood proportionality parameters with contact rates held fixed.

    The optimizer runs Nelder-Mead followed by BFGS on unconstrained
    coordinates (log scale for non-negative gammas).

    Args:
        model: Proportionality structure
        rates: Estimated contact rates on the transmission grid
        serology: Serology sample
        demography: Population constants
        max_iter: Iteration cap per optimizer stage

    Returns:
        ProportionalityFit: parameters, log-likelihood, R0 and diagnostics

    Raises:
        ConvergenceError: If the optimizers fail or the parameters diverge
    """
    if len(serology) == 0:
        raise DomainError("cannot fit a proportionality model to an empty serology dataset")
    objective = _SerologyObjective(model, rates, serology, demography)
    scale = _least_squares_scale(rates, serology, demography)
    theta0 = model.to_optimizer(model.initial_params(scale))

    simplex = minimize(objective, theta0, method="Nelder-Mead",
                       options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10, "adaptive": True})
    quasi_newton = minimize(objective, simplex.x, method="BFGS", options={"maxiter": max_iter, "gtol": 1e-6})
    best = quasi_newton if quasi_newton.fun <= simplex.fun else simplex
    settled = simplex.success or quasi_newton.success or "precision" in str(quasi_newton.message)

    if best.fun >= PENALTY_VALUE or not np.all(np.isfinite(best.x)):
        raise ConvergenceError(f"model {model.name}: no parameter value gave a convergent fixed point",
                               best_iterate=model.from_optimizer(best.x), trace=objective.trace)
    if not settled or np.any(np.abs(best.x) > PARAM_DIVERGENCE):
        raise ConvergenceError(f"model {model.name}: optimization did not converge ({quasi_newton.message})",
                               best_iterate=model.from_optimizer(best.x), trace=objective.trace)

    params = model.from_optimizer(best.x)
    hessian = numerical_hessian(objective, np.asarray(best.x, dtype=float))
    flagged = weakly_identified(hessian)
    if flagged:
        logger.warning("model %s: information matrix nearly singular", model.name)
    if objective.failures:
        logger.warning("model %s: %d fixed-point failures during optimization", model.name, objective.failures)

    waifw = apply_proportionality(model, params, rates)
    lambdas = solve_foi_fixed_point(waifw, demography)
    r0 = r0_from_waifw(waifw, demography)
    loglik = -objective.negloglik_params(params)
    logger.info("model %s: params=%s loglik=%.3f R0=%.3f", model.name,
                np.round(params, 5).tolist(), loglik, r0)
    return ProportionalityFit(model, params, waifw, lambdas, loglik, len(serology), r0,
                              converged=True, weakly_identified=flagged,
                              fixed_point_failures=objective.failures, diagnostics=model.diagnostics(params),
                              trace=objective.trace)


# ---------------------------------------------------------------------------
# Profile likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileInterval:
    estimate: float
    lower: float
    upper: float
    lower_one_sided: bool = False
    upper_one_sided: bool = False

    @property
    def one_sided(self) -> bool:
        return self.lower_one_sided or self.upper_one_sided


def profile_likelihood_ci(objective: Callable[[np.ndarray], float], estimate: Sequence[float],
                          index: int = 0, level: float = 0.95,
                          bounds: Tuple[Optional[float], Optional[float]] = (None, None),
                          max_doublings: int = 60, tol: float = 1e-10) -> ProfileInterval:
    """
    Profile likelihood interval for one parameter of a negative log-likelihood.

    The interval holds the values where twice the rise of the profiled
    objective stays below the chi-square(1) quantile for ``level``. Other
    parameters are re-optimized at each profile point. A side that reaches
    ``bounds`` or never crosses the threshold is returned one-sided.
    """
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    estimate = np.asarray(estimate, dtype=float)
    critical = float(chi2.ppf(level, df=1))
    others = [i for i in range(estimate.size) if i != index]
    f_min = float(objective(estimate))

    def profile(value: float) -> float:
        point = estimate.copy()
        point[index] = value
        if not others:
            return 2.0 * (float(objective(point)) - f_min)

        def reduced(x):
            point[others] = x
            return float(objective(point))

        res = minimize(reduced, estimate[others], method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
        return 2.0 * (float(res.fun) - f_min)

    center = float(estimate[index])

    def search(direction: int) -> Tuple[float, bool]:
        limit = bounds[0] if direction < 0 else bounds[1]
        step = max(abs(center) * 0.01, 1e-4)
        inside = center
        for _ in range(max_doublings):
            trial = center + direction * step
            if limit is not None and (trial - limit) * direction >= 0:
                if profile(limit) < critical:
                    return float(limit), True
                trial = limit
                outside = trial
                break
            if profile(trial) >= critical:
                outside = trial
                break
            inside = trial
            step *= 2.0
        else:
            return inside, True
        lo, hi = inside, outside
        while abs(hi - lo) > tol * max(1.0, abs(center)):
            mid = 0.5 * (lo + hi)
            if profile(mid) < critical:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi), False

    lower, lower_open = search(-1)
    upper, upper_open = search(+1)
    return ProfileInterval(center, lower, upper, lower_open, upper_open)


def r0_profile_interval(fit: ProportionalityFit, rates: ContactRates, serology: SerologyDataset,
                        demography: Demography, level: float = 0.95) -> ProfileInterval:
    """
    Profile interval for R0 of a one-parameter model with contact rates fixed.

    R0 is proportional to q, so the q interval maps directly onto R0.
    """
    if fit.model.n_params != 1:
        raise DomainError("R0 profile intervals are only defined for one-parameter models")
    objective = _SerologyObjective(fit.model, rates, serology, demography)
    q_interval = profile_likelihood_ci(objective.negloglik_params, fit.params, 0, level, bounds=(0.0, None))
    unit_r0 = fit.r0 / float(fit.params[0]) if fit.params[0] > 0 else 0.0
    return ProfileInterval(fit.r0, q_interval.lower * unit_r0, q_interval.upper * unit_r0,
                           q_interval.lower_one_sided, q_interval.upper_one_sided)
