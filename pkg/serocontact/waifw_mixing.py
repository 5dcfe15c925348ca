"""
Imposed mixing patterns on the WAIFW matrix, estimated from serology alone.

The force of infection implied by a WAIFW matrix beta solves

    lambda_i = (N D / L) sum_j beta_ij (x_j - x_{j+1}),   x_j = exp(-sum_{k<j} lambda_k h_k)

which is solved by damped fixed-point iteration.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import minimize, nnls

from serocontact.data_model import AgeGrid, Demography, SerologyDataset
from serocontact.errors import ConvergenceError, DataValidationError, DomainError, FixedPointError
from serocontact.foi_core import PiecewiseFoi, bernoulli_loglik, fit_piecewise_foi
from serocontact.schemas import ModelFitOut

logger = logging.getLogger(__name__)

FIXED_POINT_DAMPING = 0.5
FIXED_POINT_START = 0.1
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 10_000
PENALTY_VALUE = 1e10
IDENTIFIABILITY_RATIO = 1e-6


def _pattern(rows: Sequence[str]) -> np.ndarray:
    return np.array([[int(c) for c in row.split()] for row in rows], dtype=int)


# 1-based parameter index per cell, 0 = structural zero; rows are susceptible classes
PATTERN_STRUCTURES: Dict[str, np.ndarray] = {
    "W1": _pattern(["1 6 6 6 6 6", "6 2 6 6 6 6", "6 6 3 6 6 6",
                    "6 6 6 4 6 6", "6 6 6 6 5 6", "6 6 6 6 6 6"]),
    "W2": _pattern(["1 1 3 4 5 6", "1 2 3 4 5 6", "3 3 3 4 5 6",
                    "4 4 4 4 5 6", "5 5 5 5 5 6", "6 6 6 6 6 6"]),
    "W3": _pattern(["1 1 1 4 5 6", "1 2 3 4 5 6", "1 3 3 4 5 6",
                    "4 4 4 4 5 6", "5 5 5 5 5 6", "6 6 6 6 6 6"]),
    "W4": _pattern(["1 1 1 1 1 1", "2 2 2 2 2 2", "3 3 3 3 3 3",
                    "4 4 4 4 4 4", "5 5 5 5 5 5", "6 6 6 6 6 6"]),
    "W5": _pattern(["1 6 6 6 6 6", "6 2 6 6 6 6", "6 6 3 6 6 6",
                    "6 6 6 4 6 6", "6 6 6 6 5 6", "6 6 6 6 6 5"]),
    "W6": _pattern(["1 0 0 0 0 0", "0 2 0 0 0 0", "0 0 3 0 0 0",
                    "0 0 0 4 0 0", "0 0 0 0 5 0", "0 0 0 0 0 6"]),
}


@dataclass(frozen=True, eq=False)
class MixingPattern:
    """Map from WAIFW cell to parameter index (1..P) or structural zero (0)."""
    name: str
    structure: np.ndarray

    def __post_init__(self):
        structure = np.array(self.structure, dtype=int)
        if structure.ndim != 2 or structure.shape[0] != structure.shape[1]:
            raise DomainError("mixing pattern structure must be a square matrix")
        if np.any(structure < 0):
            raise DomainError("mixing pattern indices must be non-negative")
        used = set(np.unique(structure[structure > 0]).tolist())
        if used != set(range(1, len(used) + 1)):
            raise DomainError(f"pattern {self.name}: parameter indices must be 1..P without gaps")
        structure.setflags(write=False)
        object.__setattr__(self, "structure", structure)

    @classmethod
    def named(cls, name: str) -> "MixingPattern":
        if name not in PATTERN_STRUCTURES:
            raise DomainError(f"unknown mixing pattern {name!r}; choose from {', '.join(PATTERN_STRUCTURES)}")
        return cls(name, PATTERN_STRUCTURES[name])

    @classmethod
    def from_csv(cls, path: Union[str, Path], name: Optional[str] = None) -> "MixingPattern":
        """Custom structure: a headerless CSV of integer parameter indices."""
        try:
            structure = pd.read_csv(path, header=None).to_numpy()
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataValidationError(f"cannot read mixing pattern: {exc}", path=str(path))
        if not np.issubdtype(structure.dtype, np.integer):
            raise DataValidationError("mixing pattern cells must be integers", path=str(path))
        return cls(name or Path(path).stem, structure)

    @property
    def n_classes(self) -> int:
        return self.structure.shape[0]

    @property
    def n_params(self) -> int:
        return int(self.structure.max())


@dataclass(frozen=True, eq=False)
class WaifwMatrix:
    """beta_ij: per-capita effective contacts per year, row i susceptible."""
    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_classes, self.grid.n_classes):
            raise DomainError(f"WAIFW matrix must be {self.grid.n_classes}x{self.grid.n_classes}")
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise DomainError("WAIFW entries must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def scaled(self, factor: float) -> "WaifwMatrix":
        return WaifwMatrix(self.grid, self.values * factor)


def build_waifw(pattern: MixingPattern, params: Sequence[float], grid: Optional[AgeGrid] = None) -> WaifwMatrix:
    """Fill a WAIFW matrix from pattern parameters beta_1..beta_P."""
    params = np.asarray(params, dtype=float)
    if params.shape != (pattern.n_params,):
        raise DomainError(f"pattern {pattern.name} takes {pattern.n_params} parameters, got {params.size}")
    if np.any(params < 0) or np.any(~np.isfinite(params)):
        raise DomainError("mixing pattern parameters must be finite and non-negative")
    grid = grid or AgeGrid.reference()
    if grid.n_classes != pattern.n_classes:
        raise DomainError(f"pattern {pattern.name} has {pattern.n_classes} classes, grid has {grid.n_classes}")
    padded = np.concatenate([[0.0], params])
    return WaifwMatrix(grid, padded[pattern.structure])


def foi_operator(beta: np.ndarray, lambdas: np.ndarray, widths: np.ndarray, factor: float) -> np.ndarray:
    """Right-hand side of the force-of-infection equations for the current lambda."""
    cumulative = np.concatenate([[0.0], np.cumsum(lambdas * widths)])
    x = np.exp(-cumulative)
    return factor * beta @ (x[:-1] - x[1:])


def solve_foi_fixed_point(waifw: WaifwMatrix, demography: Demography,
                          damping: float = FIXED_POINT_DAMPING, start: float = FIXED_POINT_START,
                          tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAX_ITER) -> np.ndarray:
    """
    Endemic force of infection implied by ``waifw``.

    Raises:
        FixedPointError: If the residual stays above ``tol`` after ``max_iter`` iterations
    """
    widths = waifw.grid.widths
    factor = demography.contact_factor
    lambdas = np.full(waifw.grid.n_classes, start)
    residual = np.inf
    trace: List[float] = []
    for _ in range(max_iter):
        update = foi_operator(waifw.values, lambdas, widths, factor)
        residual = float(np.max(np.abs(update - lambdas)))
        trace.append(residual)
        if residual < tol:
            return np.maximum(update, 0.0)
        lambdas = (1.0 - damping) * lambdas + damping * update
    raise FixedPointError(f"force-of-infection fixed point did not converge (residual {residual:.3e})",
                          residual=residual, best_iterate=lambdas, trace=trace[-50:])


def pattern_design(pattern: MixingPattern, lambdas: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """G with lambda = G @ scaled_params when the x-differences are evaluated at ``lambdas``."""
    cumulative = np.concatenate([[0.0], np.cumsum(lambdas * widths)])
    x = np.exp(-cumulative)
    diffs = x[:-1] - x[1:]
    design = np.zeros((pattern.n_classes, pattern.n_params))
    for i in range(pattern.n_classes):
        for j in range(pattern.n_classes):
            p = pattern.structure[i, j]
            if p:
                design[i, p - 1] += diffs[j]
    return design


def numerical_hessian(func, x: np.ndarray, lower: Optional[np.ndarray] = None, rel_step: float = 1e-4) -> np.ndarray:
    """Finite-difference Hessian; forward differences where a coordinate sits on its lower bound."""
    n = x.size
    steps = rel_step * np.maximum(np.abs(x), 1e-3)
    forward = np.zeros(n, dtype=bool) if lower is None else x - steps < lower
    f0 = func(x)
    hess = np.zeros((n, n))

    def shifted(i, si, j=None, sj=0.0):
        y = x.copy()
        y[i] += si
        if j is not None:
            y[j] += sj
        return func(y)

    for i in range(n):
        hi = steps[i]
        if forward[i]:
            hess[i, i] = (shifted(i, 2 * hi) - 2 * shifted(i, hi) + f0) / hi ** 2
        else:
            hess[i, i] = (shifted(i, hi) - 2 * f0 + shifted(i, -hi)) / hi ** 2
        for j in range(i + 1, n):
            hj = steps[j]
            if forward[i] or forward[j]:
                value = (shifted(i, hi, j, hj) - shifted(i, hi) - shifted(j, hj) + f0) / (hi * hj)
            else:
                value = (shifted(i, hi, j, hj) - shifted(i, hi, j, -hj)
                         - shifted(i, -hi, j, hj) + shifted(i, -hi, j, -hj)) / (4 * hi * hj)
            hess[i, j] = hess[j, i] = value
    return hess


def weakly_identified(hessian: np.ndarray) -> bool:
    singular = np.linalg.svd(hessian, compute_uv=False)
    return bool(singular.size and singular.min() < IDENTIFIABILITY_RATIO * singular.max())


@dataclass
class MixingFit:
    pattern: MixingPattern
    params: np.ndarray
    waifw: WaifwMatrix
    lambdas: np.ndarray
    loglik: float
    n_obs: int
    r0: float
    weakly_identified: bool = False
    fixed_point_failures: int = 0
    converged: bool = True
    trace: List[float] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return self.pattern.n_params

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + np.log(self.n_obs) * self.n_params

    @property
    def flags(self) -> List[str]:
        flags = []
        if self.weakly_identified:
            flags.append("weakly_identified")
        if self.fixed_point_failures:
            flags.append("fixed_point_failures")
        return flags

    def to_report(self) -> ModelFitOut:
        names = [f"beta{i + 1}" for i in range(self.n_params)]
        return ModelFitOut(model=self.pattern.name, family="mixing", n_params=self.n_params,
                           params=dict(zip(names, map(float, self.params))), loglik=self.loglik,
                           aic=self.aic, bic=self.bic, r0=self.r0, converged=self.converged, flags=self.flags)


def fit_mixing_pattern(pattern: MixingPattern, serology: SerologyDataset, demography: Demography,
                       grid: Optional[AgeGrid] = None, max_iter: int = 2000) -> MixingFit:
    """
    Maximum likelihood mixing-pattern parameters under beta >= 0.

    Parameters are optimized on the scale beta * N D / L. The start solves a
    non-negative least squares problem matching the piecewise-constant force
    of infection fitted to the same data.

    Args:
        pattern: W1..W6 or a custom structure
        serology: Serology sample
        demography: Population constants
        grid: Age classes of the pattern (the six reference classes by default)
        max_iter: Optimizer iteration cap

    Returns:
        MixingFit: parameters, WAIFW matrix, log-likelihood, R0 and flags

    Raises:
        ConvergenceError: If the optimizer fails or every evaluation hit a fixed-point failure
    """
    from serocontact.transmission import next_generation_matrix, dominant_eigenvalue

    grid = grid or AgeGrid.reference()
    if grid.n_classes != pattern.n_classes:
        raise DomainError(f"pattern {pattern.name} has {pattern.n_classes} classes, grid has {grid.n_classes}")
    factor = demography.contact_factor
    widths = grid.widths
    failures = {"count": 0}
    trace: List[float] = []

    def negloglik(scaled):
        waifw = build_waifw(pattern, np.maximum(scaled, 0.0) / factor, grid)
        try:
            lambdas = solve_foi_fixed_point(waifw, demography)
        except FixedPointError:
            failures["count"] += 1
            return PENALTY_VALUE
        value = -bernoulli_loglik(PiecewiseFoi(grid, lambdas, demography.maternal_antibody_age), serology)
        trace.append(value)
        return value

    try:
        piecewise = fit_piecewise_foi(serology, grid, demography.maternal_antibody_age).foi.lambdas
    except ConvergenceError as exc:
        piecewise = np.asarray(exc.best_iterate if exc.best_iterate is not None else np.full(grid.n_classes, 0.1))
        if piecewise.size != grid.n_classes:
            piecewise = np.full(grid.n_classes, 0.1)
    design = pattern_design(pattern, piecewise, widths)
    start, _ = nnls(design, piecewise)
    starts = [np.maximum(start, 1e-6), np.full(pattern.n_params, max(float(start.mean()), 0.05))]

    best = None
    bounds = [(0.0, None)] * pattern.n_params
    for x0 in starts:
        res = minimize(negloglik, x0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_iter, "ftol": 1e-13, "gtol": 1e-8})
        if best is None or res.fun < best.fun:
            best = res
    if best.fun >= PENALTY_VALUE:
        raise ConvergenceError(f"pattern {pattern.name}: no parameter value gave a convergent fixed point",
                               best_iterate=best.x / factor, trace=trace)
    if not best.success and "ABNORMAL" not in str(best.message).upper():
        raise ConvergenceError(f"pattern {pattern.name}: optimizer failed: {best.message}",
                               best_iterate=best.x / factor, trace=trace)

    scaled = np.maximum(best.x, 0.0)
    hessian = numerical_hessian(negloglik, scaled, lower=np.zeros_like(scaled))
    flagged = weakly_identified(hessian)
    if flagged:
        logger.warning("pattern %s: information matrix nearly singular; parameters weakly identified",
                       pattern.name)
    if failures["count"]:
        logger.warning("pattern %s: %d fixed-point failures during optimization", pattern.name, failures["count"])

    params = scaled / factor
    waifw = build_waifw(pattern, params, grid)
    lambdas = solve_foi_fixed_point(waifw, demography)
    r0 = dominant_eigenvalue(next_generation_matrix(waifw, demography))
    loglik = bernoulli_loglik(PiecewiseFoi(grid, lambdas, demography.maternal_antibody_age), serology)
    logger.info("pattern %s: loglik=%.3f R0=%.3f", pattern.name, loglik, r0)
    return MixingFit(pattern, params, waifw, lambdas, loglik, len(serology), r0,
                     weakly_identified=flagged, fixed_point_failures=failures["count"], trace=trace)
