# tests/conftest.py
import os

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from serocontact.data_model import AgeGrid, Demography, write_contact_survey, write_serology
from serocontact.foi_core import PiecewiseFoi
from serocontact.simulation import simulate_contact_survey, simulate_serology

os.environ.setdefault("SEROCONTACT_LOG_LEVEL", "WARNING")

TRUE_LAMBDAS = [0.15, 0.35, 0.25, 0.12, 0.08, 0.05]


def log_mean_contacts(a, b):
    """Assortative surface: a background level plus a ridge along a = b."""
    return np.log(0.02 + 0.3 * np.exp(-(((a - b) / 6.0) ** 2)))


@pytest.fixture
def grid():
    return AgeGrid.reference()


@pytest.fixture
def demography():
    return Demography.uniform()


@pytest.fixture
def true_foi(grid):
    return PiecewiseFoi(grid, TRUE_LAMBDAS, 0.5)


@pytest.fixture
def serology(true_foi):
    return simulate_serology(true_foi, 1500, np.random.default_rng(11), age_range=(1.0, 79.0))


@pytest.fixture(scope="session")
def survey():
    return simulate_contact_survey(log_mean_contacts, 400, np.random.default_rng(5), dispersion=2.0,
                                   age_range=(0, 80))


@pytest.fixture
def runner():
    return CliRunner()


def write_config(directory, **sections):
    path = directory / "run.yaml"
    path.write_text(yaml.safe_dump(sections, sort_keys=True), encoding="utf-8")
    return path


@pytest.fixture
def input_files(tmp_path, serology, survey):
    """Serology and survey CSVs plus a fast run configuration referencing them."""
    paths = {
        "serology": tmp_path / "serology.csv",
        "participants": tmp_path / "participants.csv",
        "contacts": tmp_path / "contacts.csv",
    }
    write_serology(serology, paths["serology"])
    write_contact_survey(survey, paths["participants"], paths["contacts"])
    config = write_config(
        tmp_path,
        inputs={key: str(value) for key, value in paths.items()},
        smoothing={"log10_lambda_grid": [0.0, 2.0]},
        output={"directory": str(tmp_path / "out")},
    )
    return {**paths, "config": config, "out": tmp_path / "out", "dir": tmp_path}
