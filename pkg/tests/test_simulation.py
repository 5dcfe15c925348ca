# tests/test_simulation.py
import numpy as np
import pytest

from serocontact.data_model import SerologyDataset
from serocontact.errors import DomainError
from serocontact.foi_core import PrevalenceCurve
from serocontact.simulation import (
    augment_serology,
    largest_remainder_allocation,
    simulate_contact_survey,
    simulate_serology,
)


def test_largest_remainder_allocation():
    assert largest_remainder_allocation(10, [1, 1, 1]).tolist() == [4, 3, 3]
    assert largest_remainder_allocation(7, [0.5, 0.25, 0.25]).tolist() == [3, 2, 2]
    counts = largest_remainder_allocation(1207, np.random.default_rng(0).uniform(0, 5, 40))
    assert counts.sum() == 1207
    with pytest.raises(DomainError):
        largest_remainder_allocation(5, [0.0, 0.0])


def test_certain_immunity():
    data = simulate_serology(1.0, 50, np.random.default_rng(0))
    assert data.status.tolist() == [1] * 50
    assert np.all(data.age_exact)


def test_constant_prevalence_fraction():
    data = simulate_serology(0.983, 10000, np.random.default_rng(12), age_range=(40.0, 80.0))
    assert abs(data.status.mean() - 0.983) < 0.004
    assert data.ages.min() >= 40.0 and data.ages.max() < 80.0


def test_prevalence_out_of_range():
    with pytest.raises(DomainError):
        simulate_serology(1.2, 10, np.random.default_rng(0))


def test_foi_driven_prevalence(true_foi):
    data = simulate_serology(true_foi, 20000, np.random.default_rng(3), age_range=(1.0, 79.0))
    expected = PrevalenceCurve(true_foi)(data.ages).mean()
    assert data.status.mean() == pytest.approx(expected, abs=0.01)


def test_augment_keeps_total_and_years(demography):
    existing = simulate_serology(0.5, 2649, np.random.default_rng(1))
    augmented = augment_serology(existing, 0.983, 1207, np.random.default_rng(2), demography, (40.0, 80.0))
    assert len(augmented) == 3856
    extra = augmented.take(np.arange(2649, 3856))
    assert np.all(extra.ages == np.floor(extra.ages))
    assert extra.ages.min() >= 40.0 and extra.ages.max() <= 79.0
    assert not np.any(extra.age_exact)
    per_year = np.bincount(extra.ages.astype(int))[40:80]
    assert per_year.min() >= 30 and per_year.max() <= 31
    assert isinstance(augmented, SerologyDataset)


def test_contact_survey_generator():
    survey = simulate_contact_survey(lambda a, b: np.full(np.broadcast(a, b).shape, np.log(0.5)), 200,
                                     np.random.default_rng(6), age_range=(0, 80))
    assert survey.n_participants == 200
    assert survey.n_contacts == pytest.approx(200 * 80 * 0.5, rel=0.05)
    contacts = survey.contacts
    assert np.all(contacts["cnt_age_high"] - contacts["cnt_age_low"] == 1.0)
    assert set(contacts["part_id"]) <= set(survey.participants["part_id"])
