import json

import pytest
from typer.testing import CliRunner

from legid.cli import app
from legid.model import load_model, stack_priors

from .common import FIXTURES_PATH

runner = CliRunner()

ARM = str(FIXTURES_PATH / "floating_arm.yaml")


def _simulate(out, *args):
    return runner.invoke(
        app, ["simulate", "--model", ARM, "--duration", "1", "--seed", "3", "--out", str(out), *args]
    )


@pytest.fixture(scope="module")
def logs(tmp_path_factory):
    out = tmp_path_factory.mktemp("logs")
    assert _simulate(out, "--tag", "train").exit_code == 0
    assert _simulate(out, "--tag", "val", "--family", "crouch_extend").exit_code == 0
    return out


def test_simulate_writes_log_and_truth(logs):
    assert (logs / "train.csv").exists()
    truth = json.loads((logs / "train.truth.json").read_text())
    assert len(truth["forces"]) == 100
    assert truth["contact_frames"] == ["foot_front", "foot_left", "foot_right"]


def test_simulate_is_deterministic(tmp_path):
    assert _simulate(tmp_path / "a", "--tag", "x").exit_code == 0
    assert _simulate(tmp_path / "b", "--tag", "x").exit_code == 0
    assert (tmp_path / "a" / "x.csv").read_bytes() == (tmp_path / "b" / "x.csv").read_bytes()


def test_simulate_with_corrupted_prior(tmp_path):
    result = _simulate(tmp_path, "--set", "simulate.prior_corruption=0.3")
    assert result.exit_code == 0
    prior = load_model(tmp_path / "prior_model.yaml")
    assert not (stack_priors(prior) == stack_priors(load_model(ARM))).all()


def test_identify_end_to_end(tmp_path, logs):
    out = tmp_path / "run"
    result = runner.invoke(
        app,
        [
            "identify", "--model", ARM, "--train", str(logs / "train.csv"), "--val", str(logs / "val.csv"),
            "--gamma", "1e-8", "--metric", "geodesic", "--friction", "on", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    for name in ("identified_model.yaml", "report.txt", "summary.json", "predictions.csv"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["solutions"]["lmi"]["consistent"]
    identified = load_model(out / "identified_model.yaml")
    assert identified.n_b == 3
    assert "arm_pitch" in (out / "report.txt").read_text()


def test_identify_with_holdout_split(tmp_path, logs):
    result = runner.invoke(
        app,
        [
            "identify", "--model", ARM, "--train", str(logs / "train.csv"), "--train", str(logs / "val.csv"),
            "--holdout", "val", "--friction", "off", "--no-baseline", "--out", str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "summary.json").exists()


def test_missing_model_exits_with_config_error(tmp_path, logs):
    result = runner.invoke(app, ["identify", "--train", str(logs / "train.csv"), "--out", str(tmp_path)])
    assert result.exit_code == 1


def test_negative_gamma_exits_with_config_error(tmp_path, logs):
    result = runner.invoke(
        app, ["identify", "--model", ARM, "--train", str(logs / "train.csv"), "--gamma=-1", "--out", str(tmp_path)]
    )
    assert result.exit_code == 1


def test_missing_log_exits_with_io_error(tmp_path):
    result = runner.invoke(
        app, ["identify", "--model", ARM, "--train", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]
    )
    assert result.exit_code == 1


def test_predict_writes_per_log_files(tmp_path, logs):
    result = runner.invoke(app, ["predict", "--model", ARM, "--val", str(logs / "val.csv"), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "predictions_val.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    # the true model predicts its own noiseless data
    assert summary["rmse"]["val"]["rmse"] < 1e-6


def test_filter_writes_conditioned_copy(tmp_path, logs):
    result = runner.invoke(app, ["filter", "--model", ARM, "--train", str(logs / "train.csv"), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "train.csv").exists()


def test_filter_refuses_to_overwrite_input(logs):
    result = runner.invoke(app, ["filter", "--model", ARM, "--train", str(logs / "train.csv"), "--out", str(logs)])
    assert result.exit_code == 1


def test_inspect_reports_rank(tmp_path, logs):
    result = runner.invoke(app, ["inspect", "--model", ARM, "--train", str(logs / "train.csv"), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    data = json.loads((tmp_path / "observability.json").read_text())
    assert 0 < data["rank"] < data["n_cols"]
