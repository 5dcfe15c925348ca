# tests/test_bootstrap.py
import numpy as np
import pandas as pd
import pytest

from serocontact.bootstrap import (
    REPLICATE_COLUMNS,
    BootstrapSpec,
    ReplicateEstimate,
    ReplicateResult,
    percentile_ci,
    q_curve_table,
    randomize_ages,
    replicate_rng,
    replicate_table,
    resample_participants,
    run_bootstrap,
    summarize_bootstrap,
)
from serocontact.contact_surface import estimate_contact_rates
from serocontact.data_model import SerologyDataset, compute_diary_weights
from serocontact.errors import ConfigError, DomainError, InsufficientReplicatesError
from serocontact.foi_core import PiecewiseFoi
from serocontact.simulation import augment_serology, simulate_serology
from serocontact.proportionality import ProportionalityModelFactory
from serocontact.transmission import fit_proportionality, r0_from_waifw
from serocontact.waifw_mixing import MixingPattern, build_waifw, fit_mixing_pattern, solve_foi_fixed_point


def _whole_year_serology(n=200, seed=1):
    rng = np.random.default_rng(seed)
    ages = rng.integers(1, 79, n).astype(float)
    return SerologyDataset(np.array([f"s{i}" for i in range(n)], dtype=object), ages,
                           (rng.random(n) < 0.7).astype(np.int8), np.zeros(n, dtype=bool))


def _result(index, estimates, failures=None):
    return ReplicateResult(index, bool(estimates),
                           {name: ReplicateEstimate({"q": r0 / 50.0}, r0, -aic / 2.0 + 1.0, aic)
                            for name, (r0, aic) in estimates.items()},
                           failures or {})


def test_percentile_interval_definition():
    assert percentile_ci(np.arange(1.0, 101.0), 0.95) == pytest.approx((3.475, 97.525))
    assert percentile_ci([4.2] * 10) == (4.2, 4.2)
    assert percentile_ci([1.0, np.nan, 3.0, np.inf]) == pytest.approx((1.05, 2.95))


def test_percentile_interval_errors():
    with pytest.raises(DomainError):
        percentile_ci([1.0, 2.0], 0.0)
    with pytest.raises(InsufficientReplicatesError):
        percentile_ci([1.0])


def test_spec_validation():
    with pytest.raises(ConfigError):
        BootstrapSpec(replicates=0)
    with pytest.raises(DomainError):
        BootstrapSpec(level=1.5)
    with pytest.raises(ConfigError):
        BootstrapSpec(models=())
    with pytest.raises(ConfigError):
        BootstrapSpec(seed=-1)
    names = [c.name for c in BootstrapSpec(models=("W4", "C1", "M3")).candidates()]
    assert names == ["W4", "C1", "M3"]


def test_replicate_streams_are_reproducible():
    a = replicate_rng(7, 3).random(5)
    np.testing.assert_array_equal(a, replicate_rng(7, 3).random(5))
    assert not np.array_equal(a, replicate_rng(7, 4).random(5))


def test_randomize_ages_keeps_exact_records(serology):
    _, jittered = randomize_ages(None, serology, np.random.default_rng(0))
    np.testing.assert_array_equal(jittered.ages, serology.ages)


def test_randomize_ages_within_reported_year(survey):
    serology = _whole_year_serology()
    jittered_survey, jittered = randomize_ages(survey, serology, np.random.default_rng(0))
    assert np.all(jittered.ages >= serology.ages) and np.all(jittered.ages < serology.ages + 1.0)
    np.testing.assert_array_equal(jittered.status, serology.status)

    before = survey.participants["part_age"].to_numpy()
    after = jittered_survey.participants["part_age"].to_numpy()
    assert np.all(after >= before) and np.all(after < before + 1.0)
    contacts = jittered_survey.contacts
    assert np.array_equal(contacts["cnt_age_low"], contacts["cnt_age_high"])
    assert np.all(contacts["cnt_age_low"].to_numpy() >= survey.contacts["cnt_age_low"].to_numpy())
    assert np.all(contacts["cnt_age_high"].to_numpy() <= survey.contacts["cnt_age_high"].to_numpy())


def test_randomize_ages_is_deterministic(survey):
    serology = _whole_year_serology()
    first = randomize_ages(survey, serology, replicate_rng(5, 0))
    second = randomize_ages(survey, serology, replicate_rng(5, 0))
    np.testing.assert_array_equal(first[1].ages, second[1].ages)
    pd.testing.assert_frame_equal(first[0].contacts, second[0].contacts)


def test_resample_participants_carries_contacts(survey):
    resampled = resample_participants(survey, np.random.default_rng(4))
    assert resampled.n_participants == survey.n_participants
    assert resampled.participants["part_id"].is_unique
    per_participant = survey.contacts.groupby("part_id").size()
    original_ids = survey.participants["part_id"].to_numpy()
    picked = original_ids[np.random.default_rng(4).integers(0, len(original_ids), len(original_ids))]
    assert resampled.n_contacts == int(per_participant.reindex(picked, fill_value=0).sum())
    assert set(resampled.contacts["part_id"]) <= set(resampled.participants["part_id"])


def test_degenerate_cycle_reproduces_mixing_point_estimate(serology, demography):
    spec = BootstrapSpec(replicates=1, models=("W4",), resample_serology=False, jitter_ages=False)
    results = run_bootstrap(spec, None, serology, demography)
    point = fit_mixing_pattern(MixingPattern.named("W4"), serology, demography)
    assert results[0].converged
    assert results[0].estimates["W4"].r0 == pytest.approx(point.r0, rel=1e-10)
    assert results[0].estimates["W4"].loglik == pytest.approx(point.loglik, rel=1e-10)


def test_degenerate_cycle_reproduces_proportionality_point_estimate(survey, serology, demography, grid):
    spec = BootstrapSpec(replicates=1, models=("C3",), contact_source="saturated", resample_serology=False,
                         resample_contacts=False, jitter_ages=False)
    results = run_bootstrap(spec, survey, serology, demography)
    weighted = compute_diary_weights(survey, demography)
    rates = estimate_contact_rates(weighted, demography, grid, "C3", "saturated").rates
    point = fit_proportionality(ProportionalityModelFactory.create_model("C3"), rates, serology, demography)
    assert results[0].estimates["C3"].r0 == pytest.approx(point.r0, rel=1e-10)


def test_bootstrap_is_reproducible(serology, demography):
    spec = BootstrapSpec(replicates=3, seed=99, models=("W4",))
    first = replicate_table(run_bootstrap(spec, None, serology, demography), spec.models)
    second = replicate_table(run_bootstrap(spec, None, serology, demography), spec.models)
    assert list(first.columns) == REPLICATE_COLUMNS
    pd.testing.assert_frame_equal(first, second)
    assert first["replicate"].tolist() == [0, 1, 2]


@pytest.mark.slow
def test_parallel_run_matches_serial(serology, demography):
    spec = BootstrapSpec(replicates=4, seed=3, models=("W4",))
    serial = replicate_table(run_bootstrap(spec, None, serology, demography), spec.models)
    parallel = replicate_table(run_bootstrap(spec, None, serology, demography, jobs=2), spec.models)
    pd.testing.assert_frame_equal(serial, parallel)


def test_all_failed_replicates_raise(serology, demography):
    spec = BootstrapSpec(replicates=2, models=("C3",))
    with pytest.raises(InsufficientReplicatesError):
        run_bootstrap(spec, None, serology, demography)


def test_replicate_table_accounts_for_every_replicate():
    results = [_result(0, {"C3": (8.0, 100.0)}), _result(1, {}, {"replicate": "smoothing failed"}),
               _result(2, {"C3": (9.0, 101.0)})]
    table = replicate_table(results, ("C3",))
    assert table["converged"].tolist() == [True, False, True]
    assert table.loc[1, "error"] == "smoothing failed"
    assert np.isnan(table.loc[1, "r0"])


def test_summary_intervals_and_failures():
    spec = BootstrapSpec(replicates=5, models=("C3", "M1"), level=0.9)
    results = [_result(i, {"C3": (8.0 + i, 100.0), "M1": (5.0 + i, 100.0)}) for i in range(4)]
    results.append(_result(4, {"C3": (20.0, 100.0)}, {"M1": "optimizer failed"}))
    report = summarize_bootstrap(results, spec, {"C3": 9.5, "averaged": 8.0})
    assert report.n_converged == 5
    c3, m1 = report.models
    assert (c3.n_converged, m1.n_converged) == (5, 4)
    assert c3.r0.estimate == 9.5
    assert (c3.r0.lower, c3.r0.upper) == pytest.approx(percentile_ci([8.0, 9.0, 10.0, 11.0, 20.0], 0.9))
    assert set(c3.params) == {"q"}
    # replicate 4 lacks M1, so the average uses replicates 0-3 with equal weights
    assert (report.averaged_r0.lower, report.averaged_r0.upper) == pytest.approx(
        percentile_ci([6.5, 7.5, 8.5, 9.5], 0.9))
    assert [(f.replicate, f.model) for f in report.failures] == [(4, "M1")]


def test_summary_with_too_few_replicates_reports_nan():
    spec = BootstrapSpec(replicates=1, models=("C3",))
    report = summarize_bootstrap([_result(0, {"C3": (8.0, 100.0)})], spec)
    assert np.isnan(report.models[0].r0.lower)
    assert report.averaged_r0 is None


def test_q_curve_table_long_format():
    result = ReplicateResult(0, True, q_curves={"M6": np.array([0.1, 0.2, 0.3])})
    table = q_curve_table([result], [0.0, 1.0, 2.0])
    assert table["q"].tolist() == [0.1, 0.2, 0.3]
    assert q_curve_table([], [0.0]).empty


@pytest.mark.slow
def test_percentile_interval_covers_true_r0(grid, demography):
    waifw = build_waifw(MixingPattern.named("W4"), np.array([1.3, 1.2, 1.0, 0.4, 0.3, 0.2]) * 1e-4)
    truth = r0_from_waifw(waifw, demography)
    foi = PiecewiseFoi(grid, solve_foi_fixed_point(waifw, demography), demography.maternal_antibody_age)
    serology = simulate_serology(foi, 3000, np.random.default_rng(21), age_range=(1.0, 79.0))
    spec = BootstrapSpec(replicates=60, seed=8, models=("W4",))
    report = summarize_bootstrap(run_bootstrap(spec, None, serology, demography), spec)
    interval = report.models[0].r0
    assert interval.lower <= truth <= interval.upper


@pytest.mark.slow
def test_adult_augmentation_narrows_loglinear_r0_interval(survey, true_foi, demography):
    sparse = simulate_serology(true_foi, 600, np.random.default_rng(31), age_range=(1.0, 40.0))
    augmented = augment_serology(sparse, 0.983, 1207, np.random.default_rng(32), demography)
    spec = BootstrapSpec(replicates=40, seed=4, models=("M7",), contact_source="saturated",
                         resample_contacts=False, jitter_ages=False)

    def width(serology):
        r0 = summarize_bootstrap(run_bootstrap(spec, survey, serology, demography), spec).models[0].r0
        return r0.upper - r0.lower

    assert width(augmented) < width(sparse)
