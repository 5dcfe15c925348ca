# tests/test_belgian_regression.py
"""Regression against known VZV estimates for the Belgian serology; needs SEROCONTACT_BELGIAN_DATA pointing at the data directory."""
from pathlib import Path

import numpy as np
import pytest

from serocontact.core.settings import settings
from serocontact.data_model import AgeGrid, Demography, load_serology
from serocontact.foi_core import fit_piecewise_foi
from serocontact.waifw_mixing import MixingPattern, fit_mixing_pattern

pytestmark = pytest.mark.skipif(not settings.BELGIAN_DATA, reason="SEROCONTACT_BELGIAN_DATA is not set")


@pytest.fixture
def belgian_serology():
    return load_serology(Path(settings.BELGIAN_DATA) / "serology.csv")


def test_piecewise_foi(belgian_serology):
    fit = fit_piecewise_foi(belgian_serology, AgeGrid.reference(), 0.5)
    np.testing.assert_allclose(fit.foi.lambdas, [0.313, 0.304, 0.246, 0.0, 0.082, 0.0], atol=0.01)


def test_w4_mixing(belgian_serology):
    fit = fit_mixing_pattern(MixingPattern.named("W4"), belgian_serology, Demography())
    np.testing.assert_allclose(fit.params * 1e4, [1.334, 1.298, 1.049, 0.0, 0.349, 0.0], atol=0.05)
    assert fit.aic == pytest.approx(1372.756, abs=0.5)
    assert fit.r0 == pytest.approx(4.21, abs=0.05)
