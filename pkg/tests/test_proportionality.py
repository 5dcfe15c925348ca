# tests/test_proportionality.py
import numpy as np
import pytest

from serocontact.data_model import AgeGrid
from serocontact.errors import ConfigError
from serocontact.proportionality import (
    ConstantProportionality,
    DiscreteProportionality,
    LoglinearProportionality,
    ProportionalityModelFactory,
)

YOUNG = np.array([True, True, True, False, False, False])


def test_factory_lists_every_model():
    names = ProportionalityModelFactory.list_models()
    assert names[:5] == ["C1", "C2", "C3", "C4", "C5"]
    assert {f"M{i}" for i in range(1, 11)} <= set(names)


def test_factory_assigns_contact_filters():
    c2 = ProportionalityModelFactory.create_model("C2", contact_filter="C4")
    assert isinstance(c2, ConstantProportionality)
    assert c2.contact_filter == "C2"
    m1 = ProportionalityModelFactory.create_model("M1", contact_filter="C5")
    assert isinstance(m1, DiscreteProportionality)
    assert m1.contact_filter == "C5"
    assert ProportionalityModelFactory.create_model("M6").contact_filter == "C3"


def test_factory_rejects_unknown_model():
    with pytest.raises(ConfigError):
        ProportionalityModelFactory.create_model("M11")


def test_discrete_groups_split_at_twelve(grid):
    model = ProportionalityModelFactory.create_model("M1")
    assert model.groups(grid).tolist() == [0, 0, 0, 1, 1, 1]


def test_m1_blocks(grid):
    q = ProportionalityModelFactory.create_model("M1").q_matrix([0.185, 0.079], grid)
    assert np.all(q[np.ix_(YOUNG, YOUNG)] == 0.185)
    assert np.all(q[np.ix_(YOUNG, ~YOUNG)] == 0.079)
    assert np.all(q[np.ix_(~YOUNG, ~YOUNG)] == 0.079)


@pytest.mark.parametrize("name, young_young, young_old, old_young, old_old", [
    ("M2", 1.0, 1.0, 2.0, 2.0),
    ("M3", 1.0, 2.0, 2.0, 1.0),
    ("M4", 1.0, 0.0, 0.0, 2.0),
    ("M5", 1.0, 2.0, 1.0, 2.0),
])
def test_discrete_structures(grid, name, young_young, young_old, old_young, old_old):
    q = ProportionalityModelFactory.create_model(name).q_matrix([1.0, 2.0], grid)
    assert q[0, 0] == young_young
    assert q[0, 5] == young_old
    assert q[5, 0] == old_young
    assert q[5, 5] == old_old


def test_custom_split_age(grid):
    model = ProportionalityModelFactory.create_model("M2", split_age=6.0)
    assert model.groups(grid).tolist() == [0, 0, 1, 1, 1, 1]


def test_loglinear_uses_class_midpoints(grid):
    a = grid.midpoints
    m6 = ProportionalityModelFactory.create_model("M6")
    np.testing.assert_allclose(m6.q_matrix([-2.0, 0.03], grid), np.exp(-2.0 + 0.03 * a)[:, None] * np.ones(6))
    m9 = ProportionalityModelFactory.create_model("M9")
    np.testing.assert_allclose(m9.q_matrix([-2.0, 0.01, -0.001], grid),
                               np.ones(6)[:, None] * np.exp(-2.0 + 0.01 * a - 0.001 * a ** 2)[None, :])
    m10 = ProportionalityModelFactory.create_model("M10")
    np.testing.assert_allclose(m10.q_matrix([-2.0, 0.01, 0.02], grid),
                               np.exp(-2.0 + 0.01 * a[:, None] + 0.02 * a[None, :]))


def test_parameter_counts():
    counts = {name: ProportionalityModelFactory.create_model(name).n_params
              for name in ("C1", "M1", "M5", "M6", "M7", "M8", "M9", "M10")}
    assert counts == {"C1": 1, "M1": 2, "M5": 2, "M6": 2, "M7": 3, "M8": 2, "M9": 3, "M10": 3}


def test_q_curve_is_the_diagonal():
    m10 = ProportionalityModelFactory.create_model("M10")
    assert isinstance(m10, LoglinearProportionality)
    grid = AgeGrid.one_year(upper=10)
    params = [-1.5, 0.02, -0.01]
    np.testing.assert_allclose(m10.q_curve(params, grid.midpoints), np.diag(m10.q_matrix(params, grid)))


def test_optimizer_coordinates_round_trip():
    for name in ("C1", "M3", "M7"):
        model = ProportionalityModelFactory.create_model(name)
        params = model.initial_params(0.2)
        np.testing.assert_allclose(model.from_optimizer(model.to_optimizer(params)), params)


def test_increasing_infectious_age_is_diagnosed():
    m10 = ProportionalityModelFactory.create_model("M10")
    assert m10.diagnostics([-2.0, -0.01, 0.03]) == ["increasing_in_infectious_age"]
    assert m10.diagnostics([-2.0, 0.01, -0.03]) == []
    assert ProportionalityModelFactory.create_model("M6").diagnostics([-2.0, 0.5]) == []
