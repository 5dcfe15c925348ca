"""
Social contact surface m(a, a') estimated by a negative binomial tensor-product P-spline.

Counts are tabulated per participant and one-year contact-age band, aggregated
to diary-weighted cell statistics, and fitted by penalized IRLS with a log link.
Smoothing parameters are chosen on a grid by conditional AIC; the dispersion k
is re-estimated between IRLS solves.
"""
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, solve
from scipy.optimize import minimize, minimize_scalar
from scipy.special import gammaln

from serocontact.data_model import AgeGrid, ContactSurvey, Demography, filter_contacts, resolve_contact_ages
from serocontact.errors import ConvergenceError, DomainError, SmoothingError
from serocontact.schemas import SurfaceReport
from serocontact.spline_utils import SplineBasis, face_splitting, sum_to_zero_null_space

logger = logging.getLogger(__name__)

DISPERSION_BOUNDS = (1e-2, 1e3)
DEFAULT_LOG10_LAMBDAS = (-1.0, 0.0, 1.0, 2.0, 3.0)
ETA_CLIP = 30.0
MAX_HALVINGS = 30
MAX_ALTERNATIONS = 20


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SocialContactMatrix:
    """m_ij: mean daily contacts a person in row class i has with column class j."""
    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_classes, self.grid.n_classes):
            raise DomainError(f"contact matrix must be {self.grid.n_classes}x{self.grid.n_classes}")
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise DomainError("contact matrix entries must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def to_frame(self) -> pd.DataFrame:
        labels = self.grid.labels()
        frame = pd.DataFrame(self.values, columns=labels)
        frame.insert(0, "age", labels)
        return frame


@dataclass(frozen=True, eq=False)
class ContactRates:
    """c_ij: per-capita contact rate per year between classes i and j."""
    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_classes, self.grid.n_classes) or np.any(values < 0):
            raise DomainError("contact rates must be a non-negative square matrix on the grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def symmetrize_reciprocal(m: SocialContactMatrix, population: np.ndarray) -> SocialContactMatrix:
    """
    Impose m'_ij w_i = m'_ji w_j by averaging total contacts in both directions.

    Raises:
        DomainError: If a population entry is not positive or the shapes disagree
    """
    w = np.asarray(population, dtype=float)
    if w.shape != (m.grid.n_classes,):
        raise DomainError("population vector does not match the contact matrix grid")
    if np.any(w <= 0):
        raise DomainError(f"population is zero in age class {m.grid.labels()[int(np.argmin(w))]}")
    totals = m.values * w[:, None]
    return SocialContactMatrix(m.grid, (totals + totals.T) / (2.0 * w[:, None]))


def aggregate_matrix(m: SocialContactMatrix, population: np.ndarray,
                     coarse: AgeGrid) -> Tuple[SocialContactMatrix, np.ndarray]:
    """Population-weighted average of m over coarse classes (fractional band overlap).

    Returns:
        (coarse matrix, coarse population)
    """
    w = np.asarray(population, dtype=float)
    if coarse.lower < m.grid.lower - 1e-12 or coarse.upper > m.grid.upper + 1e-12:
        raise DomainError("coarse grid extends beyond the contact matrix grid")
    fractions = m.grid.overlap_fractions(coarse)
    coarse_w = fractions @ w
    if np.any(coarse_w <= 0):
        raise DomainError("a coarse age class has zero population")
    totals = fractions @ (w[:, None] * m.values) @ fractions.T
    return SocialContactMatrix(coarse, totals / coarse_w[:, None]), coarse_w


def contact_rates_from_matrix(m: SocialContactMatrix, population: np.ndarray,
                              coarse: Optional[AgeGrid] = None) -> ContactRates:
    """c_ij = 365 m_ji / w_i, optionally after aggregation of m to ``coarse`` classes."""
    w = np.asarray(population, dtype=float)
    if coarse is not None:
        m, w = aggregate_matrix(m, w, coarse)
    if w.shape != (m.grid.n_classes,):
        raise DomainError("population vector does not match the contact matrix grid")
    if np.any(w <= 0):
        raise DomainError("population must be positive in every age class")
    return ContactRates(m.grid, 365.0 * m.values.T / w[:, None])


# ---------------------------------------------------------------------------
# Count tables and negative binomial likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CountTable:
    """Contacts per participant (rows) and contact-age band (columns), zeros included."""
    grid: AgeGrid
    participant_ids: np.ndarray
    participant_band: np.ndarray
    weights: np.ndarray
    counts: np.ndarray

    @property
    def n_participants(self) -> int:
        return int(self.participant_band.size)

    def to_frame(self) -> pd.DataFrame:
        n, J = self.counts.shape
        return pd.DataFrame({
            "part_id": np.repeat(self.participant_ids, J),
            "part_band": np.repeat(self.participant_band, J),
            "cnt_band": np.tile(np.arange(J), n),
            "cnt_age": np.tile(self.grid.midpoints, n),
            "count": self.counts.ravel(),
            "weight": np.repeat(self.weights, J),
        })

    def cell_stats(self) -> "CellStats":
        J = self.grid.n_classes
        weight = np.bincount(self.participant_band, weights=self.weights, minlength=J)
        sums = np.zeros((J, J))
        np.add.at(sums, self.participant_band, self.weights[:, None] * self.counts)
        rows, cols = np.nonzero(self.counts)
        return CellStats(weight, sums, self.counts[rows, cols].astype(float), self.weights[rows])


def build_count_table(survey: ContactSurvey, grid: Optional[AgeGrid] = None,
                      rng: Optional[np.random.Generator] = None) -> CountTable:
    """
    Tabulate contacts per participant and contact-age band.

    Contact ages are interval midpoints, or uniform draws within the interval
    when ``rng`` is given. Participants and contacts outside the grid are left out.
    """
    grid = grid or AgeGrid.one_year()
    parts = survey.participants
    part_band = grid.locate(parts["part_age"].to_numpy(dtype=float))
    inside = part_band >= 0
    if not inside.all():
        logger.info("%d participants outside [%g, %g] left out of the count table",
                    int((~inside).sum()), grid.lower, grid.upper)
    part_ids = parts["part_id"].to_numpy(dtype=object)[inside]
    row_of = {pid: i for i, pid in enumerate(part_ids)}

    contacts = survey.contacts
    counts = np.zeros((part_ids.size, grid.n_classes))
    if len(contacts):
        cnt_band = grid.locate(resolve_contact_ages(contacts, rng))
        rows = np.array([row_of.get(pid, -1) for pid in contacts["part_id"]], dtype=int)
        keep = (rows >= 0) & (cnt_band >= 0)
        np.add.at(counts, (rows[keep], cnt_band[keep]), 1.0)
    return CountTable(grid, part_ids, part_band[inside].astype(int),
                      parts["weight"].to_numpy(dtype=float)[inside], counts)


@dataclass(frozen=True, eq=False)
class CellStats:
    """Diary-weighted sufficient statistics of the count table per (row, column) cell."""
    weight: np.ndarray
    sums: np.ndarray
    nz_counts: np.ndarray
    nz_weights: np.ndarray

    def count_constant(self, k: float) -> float:
        y, w = self.nz_counts, self.nz_weights
        return float(np.sum(w * (gammaln(y + k) - gammaln(k) - gammaln(y + 1.0))))

    def mean_terms(self, m: np.ndarray, k: float) -> float:
        log_km = np.log(k + m)
        return float(np.sum(self.weight[:, None] * k * (np.log(k) - log_km))
                     + np.sum(self.sums * (np.log(m) - log_km)))

    def loglik(self, m: np.ndarray, k: float) -> float:
        return self.count_constant(k) + self.mean_terms(m, k)

    def saturated_loglik(self, k: float) -> float:
        y, w = self.nz_counts, self.nz_weights
        return self.count_constant(k) + float(np.sum(w * (k * np.log(k / (k + y)) + y * np.log(y / (k + y)))))

    def deviance(self, m: np.ndarray, k: float) -> float:
        return 2.0 * (self.saturated_loglik(k) - self.loglik(m, k))


def estimate_dispersion(stats: CellStats, m: np.ndarray) -> Tuple[float, bool]:
    """Maximize the likelihood over k for fixed means; returns (k, capped)."""
    lo, hi = np.log(DISPERSION_BOUNDS[0]), np.log(DISPERSION_BOUNDS[1])
    res = minimize_scalar(lambda logk: -stats.loglik(m, np.exp(logk)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-6})
    k = float(np.exp(res.x))
    capped = k >= DISPERSION_BOUNDS[1] * (1.0 - 1e-3)
    if capped:
        k = DISPERSION_BOUNDS[1]
    return k, capped


# ---------------------------------------------------------------------------
# Penalized IRLS
# ---------------------------------------------------------------------------

@dataclass
class _PirlsResult:
    beta: np.ndarray
    eta: np.ndarray
    edf: float
    iterations: int
    trace: List[float]


class _TensorProblem:
    """Design, constraint and cell data shared by every IRLS solve of one fit."""

    def __init__(self, table: CountTable, basis: SplineBasis):
        grid = table.grid
        if grid.lower < basis.lower - 1e-12 or grid.upper > basis.upper + 1e-12:
            raise DomainError("count table grid extends beyond the spline range")
        self.grid = grid
        self.basis = basis
        self.stats = table.cell_stats()
        J = grid.n_classes
        b = basis.evaluate(grid.midpoints)
        rows = np.repeat(np.arange(J), J)
        cols = np.tile(np.arange(J), J)
        tensor = face_splitting(b[rows], b[cols])
        self.cell_weight = np.repeat(self.stats.weight, J)
        self.cell_sums = self.stats.sums.ravel()
        # identifiability: tensor term sums to zero over observed cells
        constraint = (self.cell_weight > 0).astype(float) @ tensor
        if not np.any(constraint):
            constraint = tensor.sum(axis=0)
        self.null_space = sum_to_zero_null_space(constraint)
        self.design = np.hstack([np.ones((J * J, 1)), tensor @ self.null_space])
        self.n_coef = self.design.shape[1]

    def penalty(self, lambda_rows: float, lambda_cols: float) -> np.ndarray:
        p = np.zeros((self.n_coef, self.n_coef))
        z = self.null_space
        p[1:, 1:] = z.T @ self.basis.tensor_penalty(lambda_rows, lambda_cols) @ z
        return p

    def means(self, beta: np.ndarray) -> np.ndarray:
        return np.exp(np.clip(self.design @ beta, -ETA_CLIP, ETA_CLIP))

    def start(self) -> np.ndarray:
        beta = np.zeros(self.n_coef)
        beta[0] = np.log(self.cell_sums.sum() / self.cell_weight.sum())
        return beta

    def coefficients(self, beta: np.ndarray) -> np.ndarray:
        """delta (K x K) with the intercept folded in; B-splines sum to one."""
        K = self.basis.n_basis
        return (self.null_space @ beta[1:]).reshape(K, K) + beta[0]

    def pirls(self, penalty: np.ndarray, k: float, beta: np.ndarray, max_iter: int, tol: float) -> _PirlsResult:
        W, S = self.cell_weight, self.cell_sums
        J = self.grid.n_classes
        observed = W > 0
        ybar = np.divide(S, W, out=np.zeros_like(S), where=observed)

        def objective(b):
            m = self.means(b)
            return -self.stats.mean_terms(m.reshape(J, J), k) + 0.5 * b @ penalty @ b

        trace: List[float] = []
        current = objective(beta)
        deviance = self.stats.deviance(self.means(beta).reshape(J, J), k)
        for iteration in range(1, max_iter + 1):
            eta = self.design @ beta
            m = np.exp(np.clip(eta, -ETA_CLIP, ETA_CLIP))
            ww = W * m * k / (k + m)
            z = eta + np.where(observed, (ybar - m) / m, 0.0)
            gram = self.design.T @ (ww[:, None] * self.design) + penalty
            try:
                trial = solve(gram, self.design.T @ (ww * z), assume_a="pos")
            except (LinAlgError, ValueError):
                trial = np.linalg.lstsq(gram, self.design.T @ (ww * z), rcond=None)[0]

            # step halving until the penalized objective does not increase
            trial_value = objective(trial)
            halvings = 0
            while not trial_value <= current + 1e-12 * abs(current) and halvings < MAX_HALVINGS:
                trial = 0.5 * (beta + trial)
                trial_value = objective(trial)
                halvings += 1
            if not np.isfinite(trial_value):
                raise SmoothingError("penalized IRLS produced a non-finite objective",
                                     best_iterate=beta, trace=trace)
            beta, current = trial, trial_value
            new_deviance = self.stats.deviance(self.means(beta).reshape(J, J), k)
            trace.append(new_deviance)
            if abs(new_deviance - deviance) / (abs(new_deviance) + 0.1) < tol and iteration > 1:
                break
            deviance = new_deviance
        else:
            raise SmoothingError(f"penalized IRLS did not converge in {max_iter} iterations",
                                 best_iterate=beta, trace=trace)

        m = self.means(beta)
        ww = W * m * k / (k + m)
        xtwx = self.design.T @ (ww[:, None] * self.design)
        try:
            hat = solve(xtwx + penalty, xtwx, assume_a="pos")
        except (LinAlgError, ValueError):
            hat = np.linalg.lstsq(xtwx + penalty, xtwx, rcond=None)[0]
        return _PirlsResult(beta, self.design @ beta, float(np.trace(hat)), iteration, trace)

    def gradient_norm(self, beta: np.ndarray, penalty: np.ndarray, k: float, loglik: float) -> float:
        m = self.means(beta)
        score = self.design.T @ ((self.cell_sums - self.cell_weight * m) * k / (k + m)) - penalty @ beta
        return float(np.max(np.abs(score)) / (1.0 + abs(loglik)))


# ---------------------------------------------------------------------------
# Surface fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothSurface:
    """Fitted log-mean surface log m(a, a') = sum delta_lp b_l(a) b_p(a')."""
    basis: SplineBasis
    coefficients: np.ndarray
    dispersion: float
    lambda_rows: float
    lambda_cols: float
    edf: float
    deviance: float
    loglik: float
    aic: float
    gradient_norm: float
    iterations: int
    fit_grid: AgeGrid
    fitted: np.ndarray
    dispersion_capped: bool = False
    n_participants: int = 0
    n_contacts: int = 0
    contact_filter: Optional[str] = None
    trace: List[float] = field(default_factory=list)

    def to_report(self) -> SurfaceReport:
        return SurfaceReport(filter=self.contact_filter or "C1", source="smooth",
                             n_participants=self.n_participants, n_contacts=self.n_contacts,
                             lambda_row=self.lambda_rows, lambda_col=self.lambda_cols,
                             dispersion=self.dispersion, dispersion_capped=self.dispersion_capped,
                             edf=self.edf, deviance=self.deviance, loglik=self.loglik, aic=self.aic,
                             gradient_norm=self.gradient_norm, iterations=self.iterations)

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "coefficients": self.coefficients.tolist(),
            "dispersion": self.dispersion,
            "lambda_rows": self.lambda_rows,
            "lambda_cols": self.lambda_cols,
            "fit_grid": self.fit_grid.breakpoints.tolist(),
            "diagnostics": {"edf": self.edf, "deviance": self.deviance, "loglik": self.loglik,
                            "aic": self.aic, "gradient_norm": self.gradient_norm,
                            "iterations": self.iterations, "dispersion_capped": self.dispersion_capped},
            "contact_filter": self.contact_filter,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SmoothSurface":
        basis = SplineBasis(**payload["basis"])
        grid = AgeGrid(np.array(payload["fit_grid"]))
        coefficients = np.array(payload["coefficients"], dtype=float)
        diag = payload.get("diagnostics", {})
        fitted = _evaluate(basis, coefficients, grid)
        return cls(basis, coefficients, float(payload["dispersion"]), float(payload["lambda_rows"]),
                   float(payload["lambda_cols"]), diag.get("edf", float("nan")),
                   diag.get("deviance", float("nan")), diag.get("loglik", float("nan")),
                   diag.get("aic", float("nan")), diag.get("gradient_norm", float("nan")),
                   diag.get("iterations", 0), grid, fitted,
                   dispersion_capped=diag.get("dispersion_capped", False),
                   contact_filter=payload.get("contact_filter"))


def _evaluate(basis: SplineBasis, coefficients: np.ndarray, grid: AgeGrid) -> np.ndarray:
    b = basis.evaluate(grid.midpoints)
    return np.exp(np.clip(b @ coefficients @ b.T, -ETA_CLIP, ETA_CLIP))


def _fit_fixed_lambda(problem: _TensorProblem, lambdas: Tuple[float, float], k: Optional[float],
                      beta: np.ndarray, max_iter: int, tol: float):
    """IRLS at fixed smoothing, alternating with dispersion updates unless k is given."""
    J = problem.grid.n_classes
    penalty = problem.penalty(*lambdas)
    fixed_k = k is not None
    k = k if fixed_k else 1.0
    capped = False
    result = problem.pirls(penalty, k, beta, max_iter, tol)
    if fixed_k:
        return result, k, capped, penalty
    for _ in range(MAX_ALTERNATIONS):
        new_k, capped = estimate_dispersion(problem.stats, problem.means(result.beta).reshape(J, J))
        if abs(new_k - k) <= 1e-4 * k:
            k = new_k
            break
        k = new_k
        result = problem.pirls(penalty, k, result.beta, max_iter, tol)
    return result, k, capped, penalty


def fit_negbin_tensor_gam(table: CountTable, basis: Optional[SplineBasis] = None,
                          log10_lambdas: Sequence[float] = DEFAULT_LOG10_LAMBDAS,
                          lambdas: Optional[Tuple[float, float]] = None,
                          dispersion: Optional[float] = None,
                          max_iter: int = 200, tol: float = 1e-8,
                          contact_filter: Optional[str] = None) -> SmoothSurface:
    """
    Diary-weighted negative binomial tensor-product P-spline fit.

    The variance is m + m^2/k. With ``lambdas`` None the two smoothing
    parameters are searched over ``10 ** log10_lambdas`` (both margins) and the
    pair with the smallest conditional AIC is kept; the dispersion is profiled
    once at a pilot penalty for the search and re-estimated at the chosen one.

    Args:
        table: Count table on a one-year grid
        basis: Marginal spline basis (K = 11 cubic P-splines on [0, 101] by default)
        log10_lambdas: Candidate smoothing parameters
        lambdas: Fixed (row, column) smoothing parameters, skipping the search
        dispersion: Fixed k, skipping its estimation
        max_iter: IRLS iteration cap
        tol: Relative deviance change that stops IRLS

    Returns:
        SmoothSurface: coefficients, dispersion and diagnostics

    Raises:
        SmoothingError: If every count is zero or IRLS fails to converge
    """
    basis = basis or SplineBasis()
    problem = _TensorProblem(table, basis)
    if problem.cell_sums.sum() <= 0:
        raise SmoothingError("all contact counts are zero, the contact surface is not estimable")
    J = problem.grid.n_classes

    if lambdas is None:
        pilot_lambdas = (10.0, 10.0)
        pilot, pilot_k, _, _ = _fit_fixed_lambda(problem, pilot_lambdas, dispersion, problem.start(),
                                                 max_iter, tol)
        best = None
        beta = pilot.beta
        for log_r, log_c in product(log10_lambdas, log10_lambdas):
            candidate = (10.0 ** log_r, 10.0 ** log_c)
            res = problem.pirls(problem.penalty(*candidate), pilot_k, beta, max_iter, tol)
            loglik = problem.stats.loglik(problem.means(res.beta).reshape(J, J), pilot_k)
            caic = -2.0 * loglik + 2.0 * res.edf
            logger.debug("lambda=(%g, %g) edf=%.2f cAIC=%.3f", *candidate, res.edf, caic)
            if best is None or caic < best[0]:
                best = (caic, candidate, res.beta)
        _, lambdas, beta = best
    else:
        beta = problem.start()

    result, k, capped, penalty = _fit_fixed_lambda(problem, tuple(lambdas), dispersion, beta, max_iter, tol)
    m = problem.means(result.beta).reshape(J, J)
    loglik = problem.stats.loglik(m, k)
    edf_total = result.edf + (0 if dispersion is not None else 1)
    coefficients = problem.coefficients(result.beta)
    if capped:
        logger.warning("dispersion k reached the cap %g; counts look Poisson", DISPERSION_BOUNDS[1])
    logger.info("contact surface: lambda=(%g, %g) k=%.4g edf=%.2f loglik=%.3f",
                lambdas[0], lambdas[1], k, result.edf, loglik)
    return SmoothSurface(
        basis=basis, coefficients=coefficients, dispersion=k,
        lambda_rows=float(lambdas[0]), lambda_cols=float(lambdas[1]), edf=result.edf,
        deviance=problem.stats.deviance(m, k), loglik=loglik, aic=-2.0 * loglik + 2.0 * edf_total,
        gradient_norm=problem.gradient_norm(result.beta, penalty, k, loglik),
        iterations=result.iterations, fit_grid=problem.grid,
        fitted=_evaluate(basis, coefficients, problem.grid), dispersion_capped=capped,
        n_participants=table.n_participants, n_contacts=int(table.counts.sum()),
        contact_filter=contact_filter, trace=result.trace,
    )


def evaluate_surface(surface: SmoothSurface, grid: AgeGrid) -> SocialContactMatrix:
    """m_ij = exp(b(a_i)' delta b(a_j)) at the band midpoints of ``grid``."""
    if grid.lower < surface.basis.lower - 1e-12 or grid.upper > surface.basis.upper + 1e-12:
        raise DomainError(
            f"grid [{grid.lower:g}, {grid.upper:g}] extrapolates beyond the fitted range "
            f"[{surface.basis.lower:g}, {surface.basis.upper:g}]"
        )
    return SocialContactMatrix(grid, _evaluate(surface.basis, surface.coefficients, grid))


# ---------------------------------------------------------------------------
# Saturated model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SaturatedFit:
    matrix: SocialContactMatrix
    dispersion: float
    loglik: float
    n_params: int
    dispersion_capped: bool = False
    n_participants: int = 0
    n_contacts: int = 0

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    def to_report(self, contact_filter: Optional[str] = None) -> SurfaceReport:
        return SurfaceReport(filter=contact_filter or "C1", source="saturated",
                             n_participants=self.n_participants, n_contacts=self.n_contacts,
                             dispersion=self.dispersion, dispersion_capped=self.dispersion_capped,
                             edf=float(self.n_params), deviance=float("nan"), loglik=self.loglik,
                             aic=self.aic)


def saturated_contact_matrix(survey: ContactSurvey, grid: AgeGrid,
                             population: np.ndarray) -> SaturatedFit:
    """
    One mean parameter per unordered pair of coarse classes, reciprocity built in.

    Parameters are log T_IJ (I <= J), the total daily contacts between the two
    classes, so m_IJ = T_IJ / w_I and m_IJ w_I = m_JI w_J hold exactly.

    Raises:
        DomainError: If no participant falls in either class of some pair
        SmoothingError: If every count is zero
        ConvergenceError: If the likelihood maximization does not converge
    """
    w = np.asarray(population, dtype=float)
    J = grid.n_classes
    if w.shape != (J,) or np.any(w <= 0):
        raise DomainError("saturated model needs a positive population for every coarse class")
    table = build_count_table(survey, grid)
    stats = table.cell_stats()
    observed = stats.weight > 0
    upper = np.triu_indices(J)
    for I, K in zip(*upper):
        if not (observed[I] or observed[K]):
            labels = grid.labels()
            raise DomainError(f"no participants in age classes {labels[I]} and {labels[K]}; "
                              f"cell ({I + 1}, {K + 1}) is not estimable")
    if stats.sums.sum() <= 0:
        raise SmoothingError("all contact counts are zero, the contact matrix is not estimable")

    mean_obs = np.divide(stats.sums, stats.weight[:, None], out=np.full((J, J), np.nan),
                         where=observed[:, None])
    totals = mean_obs * w[:, None]
    start_totals = np.nanmean(np.stack([totals, totals.T]), axis=0)
    start_totals = np.where(np.isfinite(start_totals) & (start_totals > 0), start_totals,
                            np.nanmax(start_totals) * 1e-3 + 1e-8)

    def unpack(theta):
        log_t = np.zeros((J, J))
        log_t[upper] = theta[:-1]
        log_t = np.triu(log_t) + np.triu(log_t, 1).T
        return np.exp(log_t) / w[:, None], np.exp(theta[-1])

    trace: List[float] = []

    def negloglik(theta):
        m, k = unpack(theta)
        value = -stats.loglik(np.maximum(m, 1e-300), k)
        trace.append(float(value))
        return value

    theta0 = np.concatenate([np.log(start_totals[upper]), [0.0]])
    bounds = [(None, None)] * (theta0.size - 1) + [tuple(np.log(DISPERSION_BOUNDS))]
    res = minimize(negloglik, theta0, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 5000, "ftol": 1e-14, "gtol": 1e-9})
    if not res.success and "ABNORMAL" not in str(res.message).upper():
        raise ConvergenceError(f"saturated contact model did not converge ({res.message})",
                               best_iterate=np.asarray(res.x, dtype=float), trace=trace)
    m, k = unpack(res.x)
    capped = k >= DISPERSION_BOUNDS[1] * (1.0 - 1e-3)
    logger.info("saturated contact model: %d parameters, k=%.4g, loglik=%.3f",
                theta0.size, k, -res.fun)
    return SaturatedFit(SocialContactMatrix(grid, m), float(k), float(-res.fun), int(theta0.size),
                        dispersion_capped=bool(capped), n_participants=table.n_participants,
                        n_contacts=int(table.counts.sum()))


def compare_contact_models(surface: SmoothSurface, saturated: SaturatedFit, survey: ContactSurvey,
                           population: np.ndarray) -> pd.DataFrame:
    """
    AIC of the smooth surface and the saturated model on the same coarse counts.

    The smooth surface predicts a participant's contacts in coarse class J as
    the overlap-weighted sum of its one-year means; its edf (+1 for k) count as
    parameters.
    """
    coarse = saturated.matrix.grid
    fine = surface.fit_grid
    coarse_table = build_count_table(survey, coarse)
    fine_band = fine.locate(survey.participants["part_age"].to_numpy(dtype=float))
    by_id = dict(zip(survey.participants["part_id"], fine_band))
    rows = np.array([by_id[pid] for pid in coarse_table.participant_ids], dtype=int)

    fractions = fine.overlap_fractions(coarse)
    smooth_means = np.maximum(surface.fitted[rows] @ fractions.T, 1e-300)
    y, wts, k = coarse_table.counts, coarse_table.weights[:, None], surface.dispersion
    smooth_loglik = float(np.sum(wts * (gammaln(y + k) - gammaln(k) - gammaln(y + 1.0)
                                        + k * np.log(k / (k + smooth_means))
                                        + y * np.log(smooth_means / (k + smooth_means)))))
    smooth_params = surface.edf + 1.0
    return pd.DataFrame({
        "model": ["smooth", "saturated"],
        "n_params": [smooth_params, float(saturated.n_params)],
        "loglik": [smooth_loglik, saturated.loglik],
        "aic": [-2.0 * smooth_loglik + 2.0 * smooth_params, saturated.aic],
    })


# ---------------------------------------------------------------------------
# Survey -> contact rates on the transmission grid
# ---------------------------------------------------------------------------

@dataclass
class ContactEstimate:
    contact_filter: str
    source: str
    raw: SocialContactMatrix
    symmetric: SocialContactMatrix
    rates: ContactRates
    population: np.ndarray
    surface: Optional[SmoothSurface] = None
    saturated: Optional[SaturatedFit] = None

    def to_report(self) -> SurfaceReport:
        if self.surface is not None:
            return self.surface.to_report()
        return self.saturated.to_report(self.contact_filter)


def estimate_contact_rates(survey: ContactSurvey, demography: Demography, grid: AgeGrid,
                           contact_filter: str = "C3", source: str = "smooth",
                           basis: Optional[SplineBasis] = None,
                           log10_lambdas: Sequence[float] = DEFAULT_LOG10_LAMBDAS,
                           lambdas: Optional[Tuple[float, float]] = None,
                           upper_age: int = 101, rng: Optional[np.random.Generator] = None,
                           max_iter: int = 200, tol: float = 1e-8) -> ContactEstimate:
    """
    Contact rates c_ij on ``grid`` from a weighted survey.

    ``smooth``: fit the one-year surface, symmetrize on the one-year grid,
    then aggregate and convert. ``saturated``: fit one mean per class pair
    directly on ``grid``.
    """
    filtered = filter_contacts(survey, contact_filter)
    if source == "saturated":
        population = demography.population_on(grid)
        saturated = saturated_contact_matrix(filtered, grid, population)
        rates = contact_rates_from_matrix(saturated.matrix, population)
        return ContactEstimate(contact_filter, source, saturated.matrix, saturated.matrix, rates,
                               population, saturated=saturated)
    if source != "smooth":
        raise DomainError(f"unknown contact source {source!r}")
    fine = AgeGrid.one_year(upper=upper_age)
    basis = basis or SplineBasis(upper=float(upper_age))
    table = build_count_table(filtered, fine, rng)
    surface = fit_negbin_tensor_gam(table, basis, log10_lambdas, lambdas=lambdas, max_iter=max_iter,
                                    tol=tol, contact_filter=contact_filter)
    population = demography.population_on(fine)
    raw = evaluate_surface(surface, fine)
    symmetric = symmetrize_reciprocal(raw, population)
    rates = contact_rates_from_matrix(symmetric, population, coarse=grid)
    return ContactEstimate(contact_filter, source, raw, symmetric, rates, population, surface=surface)
