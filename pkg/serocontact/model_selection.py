"""
Akaike weights, evidence ratios, model-averaged R0 and candidate-model fitting.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from serocontact.contact_surface import ContactRates
from serocontact.data_model import AgeGrid, Demography, SerologyDataset
from serocontact.errors import DomainError, InsufficientReplicatesError, SeroContactError
from serocontact.proportionality import DEFAULT_SPLIT_AGE, ProportionalityModel, ProportionalityModelFactory
from serocontact.transmission import ProportionalityFit, fit_proportionality
from serocontact.waifw_mixing import PATTERN_STRUCTURES, MixingFit, MixingPattern, fit_mixing_pattern

logger = logging.getLogger(__name__)

SELECTION_COLUMNS = ["model", "K", "loglik", "AIC", "delta", "weight", "evidence_ratio", "R0", "BIC"]


@dataclass(frozen=True)
class ModelFitSummary:
    model: str
    n_params: int
    loglik: float
    r0: Optional[float] = None
    n_obs: Optional[int] = None

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        if self.n_obs is None:
            return float("nan")
        return -2.0 * self.loglik + np.log(self.n_obs) * self.n_params

    @classmethod
    def from_aic(cls, model: str, n_params: int, aic: float, r0: Optional[float] = None) -> "ModelFitSummary":
        """Summary reconstructed from a reported AIC value."""
        return cls(model, n_params, -(aic - 2.0 * n_params) / 2.0, r0)

    @classmethod
    def from_fit(cls, fit) -> "ModelFitSummary":
        """Summary of a MixingFit or ProportionalityFit."""
        name = getattr(fit, "model", None) or fit.pattern
        return cls(name.name, fit.n_params, fit.loglik, fit.r0, fit.n_obs)


def akaike_weights(aics: Sequence[float]) -> np.ndarray:
    """exp(-delta/2) normalized to sum to one."""
    aics = np.asarray(aics, dtype=float)
    if aics.size == 0:
        raise DomainError("at least one AIC value is required")
    if not np.all(np.isfinite(aics)):
        raise DomainError("AIC values must be finite")
    relative = np.exp(-(aics - aics.min()) / 2.0)
    return relative / relative.sum()


def akaike_table(summaries: Sequence[ModelFitSummary]) -> pd.DataFrame:
    """
    Selection table: delta = AIC - min AIC, Akaike weight, evidence ratio w_best / w.

    Raises:
        DomainError: If no summary is given or an AIC is not finite
    """
    summaries = list(summaries)
    aics = np.array([s.aic for s in summaries], dtype=float)
    weights = akaike_weights(aics)
    return pd.DataFrame({
        "model": [s.model for s in summaries],
        "K": [s.n_params for s in summaries],
        "loglik": [s.loglik for s in summaries],
        "AIC": aics,
        "delta": aics - aics.min(),
        "weight": weights,
        "evidence_ratio": weights.max() / weights,
        "R0": [np.nan if s.r0 is None else s.r0 for s in summaries],
        "BIC": [s.bic for s in summaries],
    }, columns=SELECTION_COLUMNS)


def model_average_r0(summaries: Sequence[ModelFitSummary]) -> float:
    """Akaike-weighted average of R0 over the candidate set."""
    summaries = list(summaries)
    missing = [s.model for s in summaries if s.r0 is None or not np.isfinite(s.r0)]
    if missing:
        raise DomainError(f"R0 missing for model(s): {', '.join(missing)}")
    weights = akaike_weights([s.aic for s in summaries])
    return float(np.sum(weights * np.array([s.r0 for s in summaries])))


def bootstrap_model_average(replicates: Mapping[str, pd.DataFrame], level: float = 0.95):
    """
    Percentile interval of the model-averaged R0 with weights refreshed per replicate.

    Args:
        replicates: model name -> frame with columns ``replicate``, ``aic``, ``r0``
            (converged replicates only)
        level: Confidence level

    Returns:
        (averaged values per shared replicate, (lower, upper))

    Raises:
        DomainError: If the models do not share their replicate indices
        InsufficientReplicatesError: If fewer than two shared replicates remain
    """
    from serocontact.bootstrap import percentile_ci

    if not replicates:
        raise DomainError("no replicate tables given")
    indexed = {name: frame.set_index("replicate") for name, frame in replicates.items()}
    index_sets = [set(frame.index) for frame in indexed.values()]
    shared = sorted(set.intersection(*index_sets))
    if any(len(s) != len(shared) for s in index_sets):
        raise DomainError("replicate indices differ between models")
    if len(shared) < 2:
        raise InsufficientReplicatesError(f"{len(shared)} shared replicate(s); at least 2 are required")
    names = list(indexed)
    aics = np.column_stack([indexed[n].loc[shared, "aic"].to_numpy(dtype=float) for n in names])
    r0s = np.column_stack([indexed[n].loc[shared, "r0"].to_numpy(dtype=float) for n in names])
    relative = np.exp(-(aics - aics.min(axis=1, keepdims=True)) / 2.0)
    averaged = np.sum(relative / relative.sum(axis=1, keepdims=True) * r0s, axis=1)
    return averaged, percentile_ci(averaged, level)


# ---------------------------------------------------------------------------
# Candidate models
# ---------------------------------------------------------------------------

Candidate = Union[MixingPattern, ProportionalityModel]
ModelFit = Union[MixingFit, ProportionalityFit]


@dataclass
class CandidateOutcome:
    name: str
    fit: Optional[ModelFit] = None
    error: Optional[str] = None

    @property
    def converged(self) -> bool:
        return self.fit is not None


def resolve_candidate(name: str, contact_filter: str = "C3", split_age: float = DEFAULT_SPLIT_AGE,
                      custom_patterns: Optional[Mapping[str, MixingPattern]] = None) -> Candidate:
    """W-pattern, custom pattern or proportionality model for a configured model name."""
    custom_patterns = custom_patterns or {}
    if name in custom_patterns:
        return custom_patterns[name]
    if name in PATTERN_STRUCTURES:
        return MixingPattern.named(name)
    return ProportionalityModelFactory.create_model(name, contact_filter, split_age)


def required_filters(candidates: Iterable[Candidate]) -> List[str]:
    """Contact definitions whose rates the proportionality candidates need."""
    return sorted({c.contact_filter for c in candidates if isinstance(c, ProportionalityModel)})


def fit_candidate(candidate: Candidate, serology: SerologyDataset, demography: Demography,
                  grid: AgeGrid, rates: Mapping[str, ContactRates]) -> ModelFit:
    if isinstance(candidate, MixingPattern):
        return fit_mixing_pattern(candidate, serology, demography, grid)
    if candidate.contact_filter not in rates:
        raise DomainError(f"no contact rates for filter {candidate.contact_filter} (model {candidate.name})")
    return fit_proportionality(candidate, rates[candidate.contact_filter], serology, demography)


def _fit_outcome(args) -> CandidateOutcome:
    candidate, serology, demography, grid, rates = args
    try:
        return CandidateOutcome(candidate.name, fit_candidate(candidate, serology, demography, grid, rates))
    except SeroContactError as exc:
        return CandidateOutcome(candidate.name, error=exc.detail)


def fit_candidates(candidates: Sequence[Candidate], serology: SerologyDataset, demography: Demography,
                   grid: AgeGrid, rates: Mapping[str, ContactRates], jobs: int = 1) -> List[CandidateOutcome]:
    """
    Fit every candidate, keeping failures as outcomes without a fit.

    Args:
        candidates: Models in report order
        serology: Serology sample
        demography: Population constants
        grid: Transmission age grid
        rates: Contact rates per contact filter
        jobs: Worker processes

    Returns:
        List[CandidateOutcome]: one outcome per candidate, in input order
    """
    tasks = [(c, serology, demography, grid, rates) for c in candidates]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fit_outcome, tasks))
    else:
        outcomes = [_fit_outcome(task) for task in tasks]
    for outcome in outcomes:
        if outcome.error:
            logger.warning("model %s failed: %s", outcome.name, outcome.error)
    return outcomes
