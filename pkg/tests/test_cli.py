# tests/test_cli.py
import numpy as np
import orjson
import pandas as pd
import pytest

from serocontact.data_model import load_serology
from serocontact.foi_core import fit_piecewise_foi
from serocontact.main import cli
from tests.conftest import write_config


def _invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def _config(files, **sections):
    base = {
        "inputs": {k: str(files[k]) for k in ("serology", "participants", "contacts")},
        "smoothing": {"log10_lambda_grid": [0.0, 2.0]},
        "output": {"directory": str(files["out"])},
    }
    for name, values in sections.items():
        base[name] = {**base.get(name, {}), **values}
    return write_config(files["dir"], **base)


def test_version(runner):
    result = _invoke(runner, "--version")
    assert result.exit_code == 0
    assert "serocontact" in result.output


def test_fit_foi_writes_reports(runner, input_files, grid):
    result = _invoke(runner, "--config", input_files["config"], "fit-foi")
    assert result.exit_code == 0, result.output
    report = orjson.loads((input_files["out"] / "foi.json").read_bytes())
    direct = fit_piecewise_foi(load_serology(input_files["serology"]), grid, 0.5)
    np.testing.assert_allclose([c["foi"] for c in report["classes"]], direct.foi.lambdas, rtol=1e-8)
    series = pd.read_csv(input_files["out"] / "foi_series.csv")
    assert list(series.columns) == ["age", "prevalence", "foi"]
    assert len(series) == 801


def test_out_flag_overrides_config(runner, input_files, tmp_path):
    target = tmp_path / "elsewhere"
    result = _invoke(runner, "--config", input_files["config"], "--out", target, "fit-foi")
    assert result.exit_code == 0
    assert (target / "foi.json").is_file()
    assert not (input_files["out"] / "foi.json").exists()


def test_missing_serology_exits_with_usage_error(runner, input_files):
    missing = input_files["dir"] / "nowhere.csv"
    config = _config(input_files, inputs={"serology": str(missing)})
    result = _invoke(runner, "--config", config, "fit-foi")
    assert result.exit_code == 2
    assert str(missing) in result.output


def test_missing_config_file(runner, tmp_path):
    result = _invoke(runner, "--config", tmp_path / "absent.yaml", "fit-foi")
    assert result.exit_code == 2
    assert "config file not found" in result.output


def test_unknown_model_is_rejected(runner, input_files):
    config = _config(input_files, models={"include": ["C3", "M42"]})
    result = _invoke(runner, "--config", config, "fit-models")
    assert result.exit_code == 2
    assert "M42" in result.output


def test_zero_replicates_is_rejected(runner, input_files):
    config = _config(input_files, bootstrap={"replicates": 0})
    result = _invoke(runner, "--config", config, "bootstrap")
    assert result.exit_code == 2


def test_smooth_contacts_outputs(runner, input_files):
    result = _invoke(runner, "--config", input_files["config"], "smooth-contacts")
    assert result.exit_code == 0, result.output
    out = input_files["out"]
    symmetric = pd.read_csv(out / "contacts_symmetric.csv", index_col=0).to_numpy()
    assert symmetric.shape == (101, 101)
    # uniform population: reciprocity makes the matrix itself symmetric
    np.testing.assert_allclose(symmetric, symmetric.T, rtol=1e-8)
    assert pd.read_csv(out / "contacts_raw.csv", index_col=0).shape == (101, 101)
    assert pd.read_csv(out / "contact_rates.csv", index_col=0).shape == (6, 6)
    surface = orjson.loads((out / "surface.json").read_bytes())
    assert surface["report"]["filter"] == "C3"
    assert np.array(surface["surface"]["coefficients"]).shape == (11, 11)
    assert pd.read_csv(out / "contact_models.csv")["model"].tolist() == ["smooth", "saturated"]


def test_smooth_contacts_filter_reduces_contacts(runner, input_files):
    totals = {}
    for contact_filter in ("C1", "C3"):
        config = _config(input_files, contacts={"filter": contact_filter})
        assert _invoke(runner, "--config", config, "smooth-contacts").exit_code == 0
        totals[contact_filter] = orjson.loads((input_files["out"] / "surface.json").read_bytes())[
            "report"]["n_contacts"]
    assert totals["C3"] < totals["C1"]


def test_fit_models_selection_table(runner, input_files):
    config = _config(input_files, contacts={"source": "saturated"}, models={"include": ["W4", "C3", "M2"]})
    result = _invoke(runner, "--config", config, "fit-models")
    assert result.exit_code == 0, result.output
    out = input_files["out"]
    table = pd.read_csv(out / "model_selection.csv")
    assert table["model"].tolist() == ["W4", "C3", "M2"]
    assert table["weight"].sum() == pytest.approx(1.0, abs=1e-8)
    assert table["delta"].min() == 0.0
    report = orjson.loads((out / "models.json").read_bytes())
    assert report["contact_source"] == "saturated"
    c3 = next(fit for fit in report["fits"] if fit["model"] == "C3")
    assert c3["r0_lower"] < c3["r0"] < c3["r0_upper"]
    averaged = report["comparison"]["averaged_r0"]
    assert table["R0"].min() - 1e-9 <= averaged <= table["R0"].max() + 1e-9
    for name in ("W4", "C3", "M2"):
        assert (out / f"series_{name}.csv").is_file()
    assert "model-averaged R0" in result.output


def test_bootstrap_is_reproducible_from_the_cli(runner, input_files):
    config = _config(input_files, models={"include": ["W4"]}, bootstrap={"replicates": 2})
    outputs = []
    for _ in range(2):
        result = _invoke(runner, "--config", config, "--seed", 5, "bootstrap")
        assert result.exit_code == 0, result.output
        outputs.append((input_files["out"] / "bootstrap_replicates.csv").read_bytes())
    assert outputs[0] == outputs[1]
    summary = orjson.loads((input_files["out"] / "bootstrap_summary.json").read_bytes())
    assert summary["seed"] == 5
    assert summary["replicates"] == 2
    assert "2/2 replicates converged" in result.output


def test_simulate_serology_replace(runner, input_files):
    config = _config(input_files, simulate={"constant_pi": 0.983, "sample_size": 2000, "age_range": [40, 80]})
    result = _invoke(runner, "--config", config, "simulate-serology")
    assert result.exit_code == 0, result.output
    data = load_serology(input_files["out"] / "serology_simulated.csv")
    assert len(data) == 2000
    report = orjson.loads((input_files["out"] / "simulation.json").read_bytes())
    assert report["mode"] == "replace"
    assert report["prevalence"] == pytest.approx(0.983, abs=0.02)


def test_simulate_serology_augment(runner, input_files, serology):
    config = _config(input_files, simulate={"constant_pi": 0.983, "sample_size": 300, "mode": "augment",
                                            "age_range": [40, 80]})
    result = _invoke(runner, "--config", config, "--seed", 3, "simulate-serology")
    assert result.exit_code == 0, result.output
    report = orjson.loads((input_files["out"] / "simulation.json").read_bytes())
    assert report["n_records"] == len(serology) + 300
    assert report["seed"] == 3


def test_simulate_needs_one_prevalence_source(runner, input_files):
    config = _config(input_files, simulate={"constant_pi": 0.5, "foi": [0.1] * 6})
    assert _invoke(runner, "--config", config, "simulate-serology").exit_code == 2
    config = _config(input_files, simulate={"sample_size": 10})
    assert _invoke(runner, "--config", config, "simulate-serology").exit_code == 2
