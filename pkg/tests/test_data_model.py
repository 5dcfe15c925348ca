# tests/test_data_model.py
import numpy as np
import pandas as pd
import pytest

from serocontact.data_model import (
    AgeGrid,
    ContactFilter,
    ContactRecord,
    ContactSurvey,
    Demography,
    Participant,
    compute_diary_weights,
    filter_contacts,
    load_contact_survey,
    load_serology,
    resolve_contact_ages,
    write_contact_survey,
    write_serology,
)
from serocontact.errors import DataValidationError, DomainError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_reference_grid_classes():
    grid = AgeGrid.reference()
    assert grid.n_classes == 6
    assert grid.widths.tolist() == [1.5, 4.0, 6.0, 7.0, 12.0, 49.0]
    assert grid.labels()[0] == "[0.5,2)"
    assert grid.locate([0.5, 1.99, 2.0, 80.0, 80.5, 0.2]).tolist() == [0, 0, 1, 5, -1, -1]


def test_grid_rejects_unordered_breakpoints():
    with pytest.raises(DomainError):
        AgeGrid([0.0, 5.0, 5.0])
    with pytest.raises(DomainError):
        AgeGrid([1.0])


def test_overlap_fractions_split_first_year():
    fractions = AgeGrid.one_year(upper=80).overlap_fractions(AgeGrid.reference())
    assert fractions.shape == (6, 80)
    assert fractions[0, 0] == pytest.approx(0.5)
    assert fractions[0, 1] == pytest.approx(1.0)
    assert fractions[1, 1] == pytest.approx(0.0)
    np.testing.assert_allclose(fractions.sum(axis=0)[1:], 1.0)


def test_uniform_demography(demography):
    assert demography.contact_factor == pytest.approx(9943749.0 * (7.0 / 365.0) / 80.0)
    assert demography.population_by_age.size == 101
    on_grid = demography.population_on(AgeGrid.reference())
    np.testing.assert_allclose(on_grid, 9943749.0 / 80.0 * AgeGrid.reference().widths)


def test_demography_validation():
    with pytest.raises(DomainError):
        Demography(population_total=-1.0)
    with pytest.raises(DomainError):
        Demography(infectious_duration=2.0)
    with pytest.raises(DomainError):
        Demography(population_total=1000.0, population_by_age=np.full(80, 1.0))


def test_census_demography_totals():
    census = pd.DataFrame({"age": np.repeat(np.arange(90), 2), "household_size": np.tile([1, 3], 90),
                           "count": np.tile([40.0, 60.0], 90)})
    demography = Demography.from_census(census)
    assert demography.population_total == pytest.approx(80 * 100.0)
    assert demography.population_by_age.size == 90
    assert list(demography.household_size_by_age.columns) == [1, 3]


def test_load_serology_exclusions(tmp_path):
    path = _write(tmp_path / "s.csv", "id,age,status\na,0.3,0\nb,0.5,1\nc,3,1\nd,4.25,0\ne,80,1\n")
    data = load_serology(path)
    assert len(data) == 2
    assert data.n_excluded == 3
    assert data.ids.tolist() == ["c", "d"]
    assert data.age_exact.tolist() == [False, True]


def test_load_serology_explicit_exactness(tmp_path):
    path = _write(tmp_path / "s.csv", "id,age,status,age_exact\na,3,1,1\nb,4.5,0,0\n")
    data = load_serology(path)
    assert data.age_exact.tolist() == [True, False]


def test_load_serology_names_bad_line(tmp_path):
    path = _write(tmp_path / "s.csv", "id,age,status\na,3,1\nb,4,2\n")
    with pytest.raises(DataValidationError) as err:
        load_serology(path)
    assert err.value.line == 3
    assert "status" in err.value.detail


def test_load_serology_requires_rows(tmp_path):
    with pytest.raises(DataValidationError):
        load_serology(_write(tmp_path / "s.csv", "id,age,status\n"))
    with pytest.raises(DataValidationError):
        load_serology(_write(tmp_path / "t.csv", "id,years,status\na,3,1\n"))


def test_load_contact_survey(tmp_path):
    parts = _write(tmp_path / "p.csv",
                   "part_id,part_age,household_size,day_type\np1,4,3,weekday\np2,35,2,weekend\n")
    contacts = _write(tmp_path / "c.csv",
                      "part_id,cnt_age_low,cnt_age_high,closeness,duration\n"
                      "p1,3,5,close,gt4h\n"
                      "p1,,40,nonclose,lt5m\n"
                      "p2,,,close,h1_4\n")
    survey = load_contact_survey(parts, contacts)
    assert survey.n_participants == 2
    assert survey.n_contacts == 2
    assert survey.n_dropped_contacts == 1
    assert survey.contacts["cnt_age_low"].tolist() == [3.0, 40.0]
    assert survey.contacts["cnt_age_high"].tolist() == [5.0, 40.0]


def test_load_contact_survey_rejects_orphans(tmp_path):
    parts = _write(tmp_path / "p.csv", "part_id,part_age,household_size,day_type\np1,4,3,weekday\n")
    contacts = _write(tmp_path / "c.csv",
                      "part_id,cnt_age_low,cnt_age_high,closeness,duration\npX,3,5,close,gt4h\n")
    with pytest.raises(DataValidationError) as err:
        load_contact_survey(parts, contacts)
    assert err.value.line == 2


def test_load_contact_survey_drops_outliers(tmp_path):
    parts = _write(tmp_path / "p.csv",
                   "part_id,part_age,household_size,day_type\np1,4,3,weekday\np2,30,1,weekday\n")
    rows = "".join("p1,20,30,nonclose,lt5m\n" for _ in range(1001))
    contacts = _write(tmp_path / "c.csv",
                      "part_id,cnt_age_low,cnt_age_high,closeness,duration\n" + rows + "p2,25,30,close,gt4h\n")
    survey = load_contact_survey(parts, contacts)
    assert survey.excluded_participants == ("p1",)
    assert survey.n_participants == 1
    assert survey.n_contacts == 1


def test_contact_filters_are_nested(survey):
    counts = {f.value: filter_contacts(survey, f).n_contacts for f in ContactFilter}
    assert counts["C3"] <= counts["C2"] <= counts["C1"]
    assert counts["C2"] <= counts["C4"] <= counts["C1"]
    assert counts["C3"] <= counts["C5"] <= counts["C4"]
    assert filter_contacts(survey, "C3").n_participants == survey.n_participants


def test_contact_filter_definitions():
    survey = ContactSurvey.from_records(
        [Participant("p", 10.0, 2)],
        [ContactRecord("p", 1, 2, "close", "m5_15"), ContactRecord("p", 1, 2, "close", "h1_4"),
         ContactRecord("p", 1, 2, "nonclose", "gt4h"), ContactRecord("p", 1, 2, "nonclose", "m15_60")],
    )
    sizes = [filter_contacts(survey, name).n_contacts for name in ("C1", "C2", "C3", "C4", "C5")]
    assert sizes == [4, 2, 1, 3, 2]


def test_resolve_contact_ages():
    contacts = pd.DataFrame({"cnt_age_low": [20.0] * 1000, "cnt_age_high": [30.0] * 1000})
    assert resolve_contact_ages(contacts)[0] == 25.0
    drawn = resolve_contact_ages(contacts, np.random.default_rng(3))
    assert drawn.min() >= 20.0 and drawn.max() <= 30.0
    assert abs(drawn.mean() - 25.0) < 0.3


def test_diary_weights_without_household_table(survey, demography):
    weighted = compute_diary_weights(survey, demography)
    weights = weighted.participants["weight"].to_numpy()
    assert weights.mean() == pytest.approx(1.0)
    assert np.all(weights > 0)
    # participants in the same ten-year band share a weight
    bands = np.minimum(weighted.participants["part_age"].to_numpy() // 10, 7)
    for band in np.unique(bands):
        assert np.ptp(weights[bands == band]) == pytest.approx(0.0)


def _census(households):
    """Census with 100 people per age listed for each household size in ``households``."""
    rows = [(age, size, 100.0) for size, ages in households.items() for age in ages]
    return pd.DataFrame(rows, columns=["age", "household_size", "count"])


def _participants(*household_sizes, age=30.0):
    return ContactSurvey.from_records(
        [Participant(f"p{i}", age + (i % 5), size) for i, size in enumerate(household_sizes)], [])


def test_diary_weights_reweight_to_census_shares():
    demography = Demography.from_census(_census({1: range(80), 2: range(80)}))
    # census cells split 50/50, survey 25/75
    weighted = compute_diary_weights(_participants(1, 2, 2, 2), demography)
    weights = weighted.participants["weight"].to_numpy()
    np.testing.assert_allclose(weights, [2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0])
    assert weights.mean() == pytest.approx(1.0)


def test_diary_weights_fall_back_to_age_band_for_empty_cells():
    demography = Demography.from_census(_census({1: range(80), 2: range(30, 40)}))
    # nobody in the census lives in a household of four
    weighted = compute_diary_weights(_participants(1, 2, 4), demography)
    np.testing.assert_allclose(weighted.participants["weight"], [1.125, 1.125, 0.75])


def test_serology_survives_a_file_round_trip(tmp_path, serology):
    path = tmp_path / "serology.csv"
    write_serology(serology, path)
    loaded = load_serology(path)
    assert loaded.ids.tolist() == serology.ids.tolist()
    np.testing.assert_array_equal(loaded.ages, serology.ages)
    np.testing.assert_array_equal(loaded.status, serology.status)
    np.testing.assert_array_equal(loaded.age_exact, serology.age_exact)
    assert loaded.n_excluded == 0


def test_contact_survey_survives_a_file_round_trip(tmp_path, survey, demography):
    weighted = compute_diary_weights(survey, demography)
    write_contact_survey(weighted, tmp_path / "p.csv", tmp_path / "c.csv")
    loaded = load_contact_survey(tmp_path / "p.csv", tmp_path / "c.csv")
    assert loaded.participants["part_id"].tolist() == weighted.participants["part_id"].tolist()
    np.testing.assert_allclose(loaded.participants["weight"], weighted.participants["weight"], rtol=1e-12)
    np.testing.assert_array_equal(loaded.participants["household_size"], weighted.participants["household_size"])
    assert loaded.n_contacts == weighted.n_contacts
    for column in ("cnt_age_low", "cnt_age_high"):
        np.testing.assert_array_equal(loaded.contacts[column], weighted.contacts[column])
    assert loaded.contacts["duration"].tolist() == weighted.contacts["duration"].tolist()


def test_supplied_weights_are_rescaled_to_mean_one(tmp_path):
    parts = _write(tmp_path / "p.csv",
                   "part_id,part_age,household_size,day_type,weight\n"
                   "p1,4,3,weekday,3\np2,35,2,weekend,1\n")
    contacts = _write(tmp_path / "c.csv", "part_id,cnt_age_low,cnt_age_high,closeness,duration\n")
    survey = load_contact_survey(parts, contacts)
    assert survey.participants["weight"].tolist() == [1.5, 0.5]


def test_negative_supplied_weight_names_line(tmp_path):
    parts = _write(tmp_path / "p.csv",
                   "part_id,part_age,household_size,day_type,weight\n"
                   "p1,4,3,weekday,1\np2,35,2,weekend,-1\n")
    contacts = _write(tmp_path / "c.csv", "part_id,cnt_age_low,cnt_age_high,closeness,duration\n")
    with pytest.raises(DataValidationError) as err:
        load_contact_survey(parts, contacts)
    assert err.value.line == 3
