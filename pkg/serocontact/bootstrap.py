"""
Nonparametric bootstrap over the contact survey and the serology sample.

Each replicate randomizes reported ages, resamples participants, recomputes
diary weights, refits the contact surface for every needed contact filter,
resamples serology and refits the candidate models. Replicate ``b`` draws from
``SeedSequence([seed, b])`` so results do not depend on scheduling.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from serocontact.contact_surface import DEFAULT_LOG10_LAMBDAS, ContactRates, estimate_contact_rates
from serocontact.core.config import DEFAULT_CANDIDATES
from serocontact.data_model import AgeGrid, ContactSurvey, Demography, SerologyDataset, compute_diary_weights
from serocontact.errors import ConfigError, DomainError, InsufficientReplicatesError, SeroContactError
from serocontact.model_selection import (
    bootstrap_model_average,
    fit_candidates,
    required_filters,
    resolve_candidate,
)
from serocontact.proportionality import DEFAULT_SPLIT_AGE, LoglinearProportionality
from serocontact.schemas import BootstrapFailureOut, BootstrapModelOut, BootstrapReport, IntervalOut
from serocontact.spline_utils import SplineBasis
from serocontact.waifw_mixing import MixingPattern

logger = logging.getLogger(__name__)

REPLICATE_COLUMNS = ["replicate", "model", "converged", "loglik", "aic", "r0", "error"]


@dataclass(frozen=True, eq=False)
class BootstrapSpec:
    """
    Replicate count, master seed, CI level and the pipeline refitted per replicate.

    ``lambdas`` fixes the smoothing parameters per contact filter (usually the
    point-estimate choice); a filter without an entry is searched over
    ``log10_lambdas`` in every replicate.
    """
    replicates: int = 1000
    seed: int = 20070101
    level: float = 0.95
    models: Tuple[str, ...] = tuple(DEFAULT_CANDIDATES)
    contact_filter: str = "C3"
    split_age: float = DEFAULT_SPLIT_AGE
    grid: AgeGrid = field(default_factory=AgeGrid.reference)
    contact_source: str = "smooth"
    basis: SplineBasis = field(default_factory=SplineBasis)
    lambdas: Mapping[str, Tuple[float, float]] = field(default_factory=dict)
    log10_lambdas: Tuple[float, ...] = DEFAULT_LOG10_LAMBDAS
    upper_age: int = 101
    custom_patterns: Mapping[str, MixingPattern] = field(default_factory=dict)
    resample_serology: bool = True
    resample_contacts: bool = True
    jitter_ages: bool = True
    max_iter: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"bootstrap needs at least one replicate, got {self.replicates}")
        if not 0 < self.level < 1:
            raise DomainError(f"level must lie in (0, 1), got {self.level}")
        if self.seed < 0:
            raise ConfigError("bootstrap seed must be non-negative")
        if not self.models:
            raise ConfigError("bootstrap needs at least one model")

    def candidates(self) -> list:
        return [resolve_candidate(name, self.contact_filter, self.split_age, self.custom_patterns)
                for name in self.models]


@dataclass
class ReplicateEstimate:
    params: Dict[str, float]
    r0: float
    loglik: float
    aic: float


@dataclass
class ReplicateResult:
    """Outcome of one replicate; only models that converged carry estimates."""
    index: int
    converged: bool
    estimates: Dict[str, ReplicateEstimate] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    q_curves: Dict[str, np.ndarray] = field(default_factory=dict)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def percentile_ci(values: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    """
    Empirical quantiles at (1 - level)/2 and (1 + level)/2, linear interpolation.

    Raises:
        DomainError: If level is outside (0, 1)
        InsufficientReplicatesError: If fewer than two finite values are given
    """
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size < 2:
        raise InsufficientReplicatesError(f"{values.size} value(s); a percentile interval needs at least 2")
    alpha = 1.0 - level
    lower, upper = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return float(lower), float(upper)


def randomize_ages(survey: Optional[ContactSurvey], serology: SerologyDataset,
                   rng: np.random.Generator) -> Tuple[Optional[ContactSurvey], SerologyDataset]:
    """
    Replace integer-reported ages by uniform draws on [age, age + 1).

    Contact ages become a uniform draw on [low, high], stored as a degenerate
    interval. Records whose age is known exactly keep it. Draw order is
    participants, contacts, serology.
    """
    jittered_survey = None
    if survey is not None:
        parts = survey.participants.copy()
        exact = parts["age_exact"].to_numpy(dtype=bool)
        offsets = rng.random(len(parts))
        parts["part_age"] = np.where(exact, parts["part_age"].to_numpy(dtype=float),
                                     parts["part_age"].to_numpy(dtype=float) + offsets)
        contacts = survey.contacts.copy()
        low = contacts["cnt_age_low"].to_numpy(dtype=float)
        high = contacts["cnt_age_high"].to_numpy(dtype=float)
        drawn = low + (high - low) * rng.random(len(contacts))
        contacts["cnt_age_low"] = drawn
        contacts["cnt_age_high"] = drawn
        jittered_survey = ContactSurvey(parts, contacts, survey.n_dropped_contacts, survey.excluded_participants)

    offsets = rng.random(len(serology))
    ages = np.where(serology.age_exact, serology.ages, serology.ages + offsets)
    return jittered_survey, serology.with_ages(ages)


def resample_participants(survey: ContactSurvey, rng: np.random.Generator) -> ContactSurvey:
    """Draw participants with replacement; each copy gets a new id and its own contacts."""
    parts = survey.participants
    pick = rng.integers(0, len(parts), len(parts))
    new_ids = np.array([f"b{i + 1:06d}" for i in range(pick.size)], dtype=object)
    mapping = pd.DataFrame({"part_id": parts["part_id"].to_numpy()[pick], "new_id": new_ids})
    contacts = mapping.merge(survey.contacts, on="part_id", how="inner", sort=False)
    contacts = contacts.drop(columns="part_id").rename(columns={"new_id": "part_id"})
    contacts = contacts[list(survey.contacts.columns)].reset_index(drop=True)
    resampled = parts.iloc[pick].reset_index(drop=True).copy()
    resampled["part_id"] = new_ids
    return ContactSurvey(resampled, contacts, survey.n_dropped_contacts, survey.excluded_participants)


def _replicate_rates(spec: BootstrapSpec, survey: ContactSurvey, demography: Demography,
                     filters: Sequence[str], rng: np.random.Generator) -> Dict[str, ContactRates]:
    if spec.resample_contacts:
        survey = resample_participants(survey, rng)
    survey = compute_diary_weights(survey, demography)
    rates = {}
    for contact_filter in filters:
        estimate = estimate_contact_rates(
            survey, demography, spec.grid, contact_filter, spec.contact_source, spec.basis,
            spec.log10_lambdas, lambdas=spec.lambdas.get(contact_filter), upper_age=spec.upper_age,
            max_iter=spec.max_iter, tol=spec.tol,
        )
        rates[contact_filter] = estimate.rates
    return rates


def run_replicate(index: int, spec: BootstrapSpec, survey: Optional[ContactSurvey],
                  serology: SerologyDataset, demography: Demography) -> ReplicateResult:
    """One bootstrap cycle; failures are recorded, never raised."""
    rng = replicate_rng(spec.seed, index)
    candidates = spec.candidates()
    filters = required_filters(candidates)
    try:
        if spec.jitter_ages:
            survey, serology = randomize_ages(survey if filters else None, serology, rng)
        rates: Dict[str, ContactRates] = {}
        if filters:
            if survey is None:
                raise DomainError("proportionality models need a contact survey")
            rates = _replicate_rates(spec, survey, demography, filters, rng)
        if spec.resample_serology:
            serology = serology.take(rng.integers(0, len(serology), len(serology)))
    except SeroContactError as exc:
        logger.debug("replicate %d: data stage failed: %s", index, exc.detail)
        return ReplicateResult(index, False, failures={"replicate": exc.detail})

    outcomes = fit_candidates(candidates, serology, demography, spec.grid, rates)
    estimates, failures, curves = {}, {}, {}
    q_ages = np.arange(0.0, np.floor(spec.grid.upper) + 1.0)
    for candidate, outcome in zip(candidates, outcomes):
        if not outcome.converged:
            failures[outcome.name] = outcome.error
            continue
        fit = outcome.fit
        report = fit.to_report()
        estimates[outcome.name] = ReplicateEstimate(report.params, fit.r0, fit.loglik, fit.aic)
        if isinstance(candidate, LoglinearProportionality):
            curves[outcome.name] = candidate.q_curve(fit.params, q_ages)
    return ReplicateResult(index, bool(estimates), estimates, failures, curves)


_WORKER_STATE: dict = {}


def _init_worker(spec, survey, serology, demography):
    _WORKER_STATE.update(spec=spec, survey=survey, serology=serology, demography=demography)


def _run_in_worker(index: int) -> ReplicateResult:
    state = _WORKER_STATE
    return run_replicate(index, state["spec"], state["survey"], state["serology"], state["demography"])


def run_bootstrap(spec: BootstrapSpec, survey: Optional[ContactSurvey], serology: SerologyDataset,
                  demography: Demography, jobs: int = 1, progress: bool = False) -> List[ReplicateResult]:
    """
    Run ``spec.replicates`` bootstrap cycles.

    Args:
        spec: Replicate count, seed and pipeline
        survey: Contact survey (may be None when only mixing patterns are listed)
        serology: Serology sample
        demography: Population constants and census composition
        jobs: Worker processes
        progress: Show a tqdm progress bar

    Returns:
        List[ReplicateResult]: one result per replicate, ordered by index

    Raises:
        InsufficientReplicatesError: If no replicate converged
    """
    indices = range(spec.replicates)
    bar = dict(total=spec.replicates, desc="bootstrap", unit="rep", disable=not progress)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(spec, survey, serology, demography)) as pool:
            results = list(tqdm(pool.map(_run_in_worker, indices), **bar))
    else:
        results = [run_replicate(i, spec, survey, serology, demography) for i in tqdm(indices, **bar)]
    results.sort(key=lambda r: r.index)

    n_converged = sum(r.converged for r in results)
    logger.info("bootstrap: %d of %d replicates converged", n_converged, spec.replicates)
    if n_converged < spec.replicates:
        logger.warning("%d bootstrap replicates did not converge", spec.replicates - n_converged)
    if n_converged == 0:
        raise InsufficientReplicatesError(f"none of the {spec.replicates} bootstrap replicates converged")
    return results


# ---------------------------------------------------------------------------
# Tables and summary
# ---------------------------------------------------------------------------

def replicate_table(results: Sequence[ReplicateResult], models: Sequence[str]) -> pd.DataFrame:
    """One row per (replicate, model)."""
    rows = []
    for result in results:
        for name in models:
            est = result.estimates.get(name)
            error = result.failures.get(name) or result.failures.get("replicate")
            rows.append({
                "replicate": result.index,
                "model": name,
                "converged": est is not None,
                "loglik": est.loglik if est else np.nan,
                "aic": est.aic if est else np.nan,
                "r0": est.r0 if est else np.nan,
                "error": error if est is None else "",
            })
    return pd.DataFrame(rows, columns=REPLICATE_COLUMNS)


def parameter_table(results: Sequence[ReplicateResult]) -> pd.DataFrame:
    rows = [{"replicate": r.index, "model": name, "param": param, "value": value}
            for r in results for name, est in r.estimates.items() for param, value in est.params.items()]
    return pd.DataFrame(rows, columns=["replicate", "model", "param", "value"])


def q_curve_table(results: Sequence[ReplicateResult], ages: Sequence[float]) -> pd.DataFrame:
    """Fitted q(a) per replicate for loglinear models, long format."""
    ages = np.asarray(ages, dtype=float)
    frames = [pd.DataFrame({"replicate": r.index, "model": name, "age": ages, "q": curve})
              for r in results for name, curve in r.q_curves.items()]
    if not frames:
        return pd.DataFrame(columns=["replicate", "model", "age", "q"])
    return pd.concat(frames, ignore_index=True)


def _interval(values: Sequence[float], level: float, estimate: Optional[float], label: str) -> IntervalOut:
    try:
        lower, upper = percentile_ci(values, level)
    except InsufficientReplicatesError as exc:
        logger.warning("%s: %s", label, exc.detail)
        lower = upper = float("nan")
    return IntervalOut(estimate=estimate, lower=lower, upper=upper)


def summarize_bootstrap(results: Sequence[ReplicateResult], spec: BootstrapSpec,
                        point_estimates: Optional[Mapping[str, float]] = None) -> BootstrapReport:
    """
    Percentile intervals per model and, with several models, for the averaged R0.

    The averaged R0 uses the replicates in which every listed model converged,
    with Akaike weights refreshed in each of them.
    """
    point_estimates = point_estimates or {}
    table = replicate_table(results, spec.models)
    params = parameter_table(results)
    models = []
    for name in spec.models:
        done = table[(table["model"] == name) & table["converged"]]
        param_intervals = {}
        for param, group in params[params["model"] == name].groupby("param", sort=True):
            param_intervals[param] = _interval(group["value"], spec.level, None, f"{name} {param}")
        models.append(BootstrapModelOut(
            model=name, n_converged=len(done),
            r0=_interval(done["r0"], spec.level, point_estimates.get(name), f"{name} R0"),
            params=param_intervals,
        ))

    averaged = None
    if len(spec.models) > 1:
        complete = [r.index for r in results if all(name in r.estimates for name in spec.models)]
        per_model = {name: table[(table["model"] == name) & table["replicate"].isin(complete)]
                     [["replicate", "aic", "r0"]] for name in spec.models}
        try:
            _, (lower, upper) = bootstrap_model_average(per_model, spec.level)
            averaged = IntervalOut(estimate=point_estimates.get("averaged"), lower=lower, upper=upper)
        except InsufficientReplicatesError as exc:
            logger.warning("averaged R0: %s", exc.detail)

    failures = [BootstrapFailureOut(replicate=r.index, model=None if name == "replicate" else name, reason=reason)
                for r in results for name, reason in r.failures.items()]
    return BootstrapReport(replicates=spec.replicates, seed=spec.seed, level=spec.level,
                           n_converged=sum(r.converged for r in results), models=models,
                           averaged_r0=averaged, failures=failures)
