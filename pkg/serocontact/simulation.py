"""
Synthetic serology and contact surveys for validation runs and sensitivity analyses.
"""
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from serocontact.data_model import (
    CLOSENESS_LEVELS,
    DURATION_CATEGORIES,
    AgeGrid,
    ContactSurvey,
    Demography,
    SerologyDataset,
)
from serocontact.errors import DomainError
from serocontact.foi_core import PiecewiseFoi, PrevalenceCurve

logger = logging.getLogger(__name__)

Prevalence = Union[float, PiecewiseFoi]


def largest_remainder_allocation(total: int, weights: Sequence[float]) -> np.ndarray:
    """Integer counts proportional to ``weights`` that sum exactly to ``total``."""
    weights = np.asarray(weights, dtype=float)
    if total < 0 or weights.size == 0 or np.any(weights < 0) or weights.sum() <= 0:
        raise DomainError("allocation needs a non-negative total and non-negative weights with a positive sum")
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(int)
    remainder = total - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def _prevalence_values(prevalence: Prevalence, ages: np.ndarray) -> np.ndarray:
    if isinstance(prevalence, PiecewiseFoi):
        values = np.where(ages <= prevalence.onset, 0.0, PrevalenceCurve(prevalence)(ages))
        return values
    value = float(prevalence)
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"prevalence must lie in [0, 1], got {value}")
    return np.full(ages.shape, value)


def simulate_serology(prevalence: Prevalence, sample_size: int, rng: np.random.Generator,
                      age_range: Tuple[float, float] = (1.0, 80.0),
                      population_by_age: Optional[np.ndarray] = None,
                      id_prefix: str = "sim") -> SerologyDataset:
    """
    Draw Bernoulli(pi(a)) immunity statuses.

    With ``population_by_age`` the subjects are allocated to one-year ages in
    proportion to the population (largest-remainder rounding) and their ages
    are reported as whole years; otherwise ages are uniform on ``age_range``
    and exact.

    Raises:
        DomainError: If a constant prevalence lies outside [0, 1]
    """
    lo, hi = age_range
    if not hi > lo:
        raise DomainError("age_range must have positive length")
    if sample_size < 0:
        raise DomainError("sample_size must be non-negative")
    if population_by_age is not None:
        years = np.arange(int(np.ceil(lo)), int(np.ceil(hi)))
        available = years[years < len(population_by_age)]
        counts = largest_remainder_allocation(sample_size, np.asarray(population_by_age, dtype=float)[available])
        ages = np.repeat(available, counts).astype(float)
        exact = np.zeros(ages.size, dtype=bool)
    else:
        ages = np.sort(rng.uniform(lo, hi, sample_size))
        exact = np.ones(ages.size, dtype=bool)
    pi = _prevalence_values(prevalence, ages)
    status = (rng.random(ages.size) < pi).astype(np.int8)
    ids = np.array([f"{id_prefix}{i + 1:06d}" for i in range(ages.size)], dtype=object)
    return SerologyDataset(ids, ages, status, exact)


def augment_serology(existing: SerologyDataset, prevalence: Prevalence, sample_size: int,
                     rng: np.random.Generator, demography: Demography,
                     age_range: Tuple[float, float] = (40.0, 80.0)) -> SerologyDataset:
    """Append ``sample_size`` population-proportional simulated subjects to ``existing``."""
    extra = simulate_serology(prevalence, sample_size, rng, age_range,
                              population_by_age=demography.population_by_age, id_prefix="aug")
    logger.info("Augmented %d serology records with %d simulated subjects in [%g, %g)",
                len(existing), len(extra), *age_range)
    return existing.concat(extra)


def expected_serology(foi: PiecewiseFoi, ages: Sequence[float], per_age: int = 1000) -> SerologyDataset:
    """Deterministic dataset whose immune counts at each age equal round(per_age * pi(a))."""
    ages = np.asarray(ages, dtype=float)
    pi = _prevalence_values(foi, ages)
    immune = np.rint(per_age * pi).astype(int)
    all_ages = np.repeat(ages, per_age)
    status = np.concatenate([np.r_[np.ones(k, dtype=np.int8), np.zeros(per_age - k, dtype=np.int8)]
                             for k in immune])
    ids = np.array([f"exp{i + 1:07d}" for i in range(all_ages.size)], dtype=object)
    return SerologyDataset(ids, all_ages, status, np.ones(all_ages.size, dtype=bool))


def simulate_contact_survey(log_mean: Callable[[np.ndarray, np.ndarray], np.ndarray], n_participants: int,
                            rng: np.random.Generator, dispersion: Optional[float] = None,
                            age_range: Tuple[int, int] = (0, 80), contact_grid: Optional[AgeGrid] = None,
                            closeness_prob: float = 0.6) -> ContactSurvey:
    """
    Participants with whole-year ages and negative binomial contact counts per one-year band.

    ``log_mean(a, b)`` gives the log of the expected daily contacts a person of
    age a has with people of age b (band midpoints are passed). ``dispersion``
    None draws Poisson counts. Each contact is recorded with the interval of
    its one-year band, random closeness and duration.
    """
    grid = contact_grid or AgeGrid.one_year(upper=age_range[1])
    part_age = rng.integers(age_range[0], age_range[1], n_participants).astype(float)
    household = rng.integers(1, 6, n_participants)
    day_type = np.where(rng.random(n_participants) < 5.0 / 7.0, "weekday", "weekend")

    means = np.exp(log_mean((part_age + 0.5)[:, None], grid.midpoints[None, :]))
    if dispersion is None:
        counts = rng.poisson(means)
    else:
        counts = rng.negative_binomial(dispersion, dispersion / (dispersion + means))

    part_ids = np.array([f"p{i + 1:05d}" for i in range(n_participants)], dtype=object)
    rows, bands = np.nonzero(counts)
    reps = counts[rows, bands]
    contact_part = np.repeat(part_ids[rows], reps)
    contact_band = np.repeat(bands, reps)
    n_contacts = contact_part.size
    participants = pd.DataFrame({
        "part_id": part_ids,
        "part_age": part_age,
        "household_size": household.astype(int),
        "day_type": day_type,
        "weight": np.ones(n_participants),
        "age_exact": np.zeros(n_participants, dtype=bool),
    })
    contacts = pd.DataFrame({
        "part_id": contact_part,
        "cnt_age_low": grid.breakpoints[:-1][contact_band],
        "cnt_age_high": grid.breakpoints[1:][contact_band],
        "closeness": np.where(rng.random(n_contacts) < closeness_prob, CLOSENESS_LEVELS[0], CLOSENESS_LEVELS[1]),
        "duration": np.array(DURATION_CATEGORIES, dtype=object)[rng.integers(0, len(DURATION_CATEGORIES), n_contacts)],
    })
    return ContactSurvey(participants, contacts)
