# tests/test_waifw_mixing.py
import numpy as np
import pytest

from serocontact.data_model import AgeGrid, Demography
from serocontact.errors import DataValidationError, DomainError, FixedPointError
from serocontact.foi_core import PiecewiseFoi, bernoulli_loglik
from serocontact.simulation import expected_serology
from serocontact.waifw_mixing import (
    PATTERN_STRUCTURES,
    MixingPattern,
    WaifwMatrix,
    build_waifw,
    fit_mixing_pattern,
    foi_operator,
    solve_foi_fixed_point,
    weakly_identified,
)

# W4 estimates for Belgian VZV serology, per 10^4
W4_BETA = np.array([1.334, 1.298, 1.049, 0.0, 0.349, 0.0]) * 1e-4
DENSE_AGES = np.r_[0.75, 1.25, 1.75, np.arange(2.5, 80.0, 1.0)]


def test_every_pattern_uses_six_parameters():
    for name in PATTERN_STRUCTURES:
        pattern = MixingPattern.named(name)
        assert pattern.n_classes == 6
        assert pattern.n_params == 6


def test_w4_rows_are_constant():
    waifw = build_waifw(MixingPattern.named("W4"), [1, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(waifw.values, np.repeat(np.arange(1.0, 7.0)[:, None], 6, axis=1))


def test_w6_is_diagonal():
    waifw = build_waifw(MixingPattern.named("W6"), [0.3, 0.1, 0.2, 0.5, 0.7, 0.9])
    assert np.count_nonzero(waifw.values - np.diag(np.diag(waifw.values))) == 0


def test_w3_shares_first_parameter():
    waifw = build_waifw(MixingPattern.named("W3"), [1, 2, 3, 4, 5, 6])
    assert waifw.values[0, 2] == 1.0
    assert waifw.values[2, 0] == 1.0


def test_build_waifw_validation():
    pattern = MixingPattern.named("W1")
    with pytest.raises(DomainError):
        build_waifw(pattern, [0.1, -0.1, 0.1, 0.1, 0.1, 0.1])
    with pytest.raises(DomainError):
        build_waifw(pattern, [0.1] * 5)
    with pytest.raises(DomainError):
        MixingPattern.named("W9")


def test_custom_pattern_from_csv(tmp_path):
    path = tmp_path / "block.csv"
    path.write_text("1,2\n2,3\n", encoding="utf-8")
    pattern = MixingPattern.from_csv(path)
    assert pattern.name == "block"
    assert pattern.n_params == 3
    grid = AgeGrid([0.5, 12.0, 80.0])
    assert build_waifw(pattern, [1.0, 2.0, 3.0], grid).values.tolist() == [[1.0, 2.0], [2.0, 3.0]]
    with pytest.raises(DomainError):
        build_waifw(pattern, [1.0, 2.0, 3.0])


def test_custom_pattern_rejects_gaps_and_fractions(tmp_path):
    gaps = tmp_path / "gaps.csv"
    gaps.write_text("1,3\n3,3\n", encoding="utf-8")
    with pytest.raises(DomainError):
        MixingPattern.from_csv(gaps)
    fractions = tmp_path / "fractions.csv"
    fractions.write_text("1.5,2\n2,2\n", encoding="utf-8")
    with pytest.raises(DataValidationError):
        MixingPattern.from_csv(fractions)


def test_zero_waifw_gives_zero_foi(grid, demography):
    lambdas = solve_foi_fixed_point(WaifwMatrix(grid, np.zeros((6, 6))), demography)
    np.testing.assert_allclose(lambdas, 0.0, atol=1e-10)


def test_single_class_fixed_point(demography):
    grid = AgeGrid([0.5, 80.0])
    h = 79.5
    beta = 2.0 / (demography.contact_factor * h)
    lambdas = solve_foi_fixed_point(WaifwMatrix(grid, [[beta]]), demography)
    assert lambdas[0] * h == pytest.approx(1.5936, abs=1e-4)


def test_fixed_point_residual(grid, demography):
    waifw = build_waifw(MixingPattern.named("W4"), W4_BETA)
    lambdas = solve_foi_fixed_point(waifw, demography)
    update = foi_operator(waifw.values, lambdas, grid.widths, demography.contact_factor)
    np.testing.assert_allclose(update, lambdas, atol=1e-9)
    assert lambdas[3] == pytest.approx(0.0, abs=1e-9)


def test_foi_grows_with_waifw(grid, demography):
    rng = np.random.default_rng(2)
    base = rng.uniform(0.0, 1.0, (6, 6)) / (demography.contact_factor * 20.0)
    low = solve_foi_fixed_point(WaifwMatrix(grid, base), demography)
    high = solve_foi_fixed_point(WaifwMatrix(grid, 1.5 * base), demography)
    assert np.all(high >= low - 1e-9)


def test_fixed_point_converges_for_random_positive_waifw(grid, demography):
    rng = np.random.default_rng(17)
    for _ in range(100):
        base = rng.uniform(0.01, 1.0, (6, 6))
        ngm = demography.contact_factor * grid.widths[:, None] * base
        target = rng.uniform(1.5, 6.0)
        beta = base * target / np.max(np.abs(np.linalg.eigvals(ngm)))
        lambdas = solve_foi_fixed_point(WaifwMatrix(grid, beta), demography)
        update = foi_operator(beta, lambdas, grid.widths, demography.contact_factor)
        np.testing.assert_allclose(update, lambdas, atol=1e-9)
        assert np.all(lambdas > 0.0)


def test_fixed_point_failure_reports_residual(demography):
    waifw = build_waifw(MixingPattern.named("W4"), W4_BETA)
    with pytest.raises(FixedPointError) as err:
        solve_foi_fixed_point(waifw, demography, max_iter=2)
    assert err.value.residual > 0
    assert err.value.best_iterate is not None


def test_weakly_identified_threshold():
    assert weakly_identified(np.diag([1.0, 1e-8]))
    assert not weakly_identified(np.diag([1.0, 0.5]))


def test_w4_fit_recovers_parameters(grid, demography):
    truth = build_waifw(MixingPattern.named("W4"), W4_BETA)
    foi = PiecewiseFoi(grid, solve_foi_fixed_point(truth, demography), demography.maternal_antibody_age)
    data = expected_serology(foi, DENSE_AGES, per_age=2000)
    fit = fit_mixing_pattern(MixingPattern.named("W4"), data, demography)
    assert fit.loglik >= bernoulli_loglik(foi, data) - 1e-4
    np.testing.assert_allclose(fit.params * 1e4, W4_BETA * 1e4, atol=0.05)
    # identical columns: R0 = sum_i (N D / L) h_i beta_i
    assert fit.r0 == pytest.approx(demography.contact_factor * np.sum(grid.widths * fit.params), rel=1e-8)
    assert fit.aic == pytest.approx(-2.0 * fit.loglik + 12.0)
    report = fit.to_report()
    assert report.family == "mixing"
    assert list(report.params) == [f"beta{i}" for i in range(1, 7)]


@pytest.mark.slow
def test_w6_with_a_zero_class_is_flagged(grid):
    demography = Demography()
    foi = PiecewiseFoi(grid, [0.313, 0.304, 0.246, 0.0, 0.082, 0.0], 0.5)
    data = expected_serology(foi, DENSE_AGES, per_age=50)
    fit = fit_mixing_pattern(MixingPattern.named("W6"), data, demography)
    assert fit.weakly_identified
    assert "weakly_identified" in fit.flags
