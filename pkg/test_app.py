import json
from pathlib import Path

import pandas as pd
import pytest

import app
import photic
from params import HanParams

DATA = Path(__file__).parent / "_data"
SMALL = ["--L", "1", "--Nz", "3", "--M", "2"]


def run(out, *args):
    return app.main([*args, "--out", str(out)])


def load(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_simulate_single_layer_flat(tmp_path):
    assert run(tmp_path, "simulate", "--L", "1", "--Nz", "1", "--plots", "off") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    r = photic.rates(200.0, HanParams())
    assert result["objective"] == pytest.approx(float(r.zeta - r.gamma * r.beta / r.alpha) / 0.1, rel=1e-10)
    assert result["sigma"] == "1"
    assert result["config_echo"]["parameters"]["L"] == 1.0
    assert "workers" not in result["config_echo"]["run"]
    assert {"timing.json", "raceway.log", "profile.csv", "trajectories.csv", "table.csv"} <= {p.name for p in tmp_path.iterdir()}
    assert not (tmp_path / "topography.svg").exists()
    profile = pd.read_csv(tmp_path / "profile.csv")
    assert list(profile.columns) == ["x", "h", "zb", "eta", "u", "Fr"]
    assert list(pd.read_csv(tmp_path / "trajectories.csv").columns) == ["x", "z1"]
    assert len(profile) == 101
    assert load(tmp_path / "timing.json")["workers"] == 1


def test_simulate_reported_permutation(tmp_path):
    assert run(tmp_path, "simulate", "--L", "1", "--perm", "reported:fixed-L100") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["cycles"] == "(1 2 4 7)(3 6)(5)"
    assert result["order"] == 4
    assert result["periodic_residual"] < 1e-14
    assert len(result["gradient"]) == 5
    assert (tmp_path / "topography.svg").exists()


def test_simulate_with_coefficients(tmp_path):
    assert run(tmp_path, "simulate", *SMALL, "--coeffs", "0.01,-0.02", "--perm", "2-3-1", "--plots", "off") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["coefficients"] == [0.4, 0.01, -0.02]
    assert result["feasible"] is True


def test_unknown_command_is_a_usage_error(tmp_path, capsys):
    assert run(tmp_path, "bogus") == app.EXIT_USAGE
    error = load(tmp_path / "error.json")
    assert error["error"] == "usage"
    assert "bogus" in error["message"]
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"


def test_unknown_flag_is_a_usage_error(tmp_path):
    assert run(tmp_path, "simulate", "--frobnicate") == app.EXIT_USAGE


def test_search_needs_a_regime(tmp_path):
    assert run(tmp_path, "search", *SMALL) == app.EXIT_USAGE
    assert "regime" in load(tmp_path / "error.json")["message"]


def test_permutation_size_mismatch(tmp_path):
    assert run(tmp_path, "simulate", *SMALL, "--perm", "2-1") == app.EXIT_USAGE


def test_invalid_config_fails(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("kr = -1\n", encoding="utf-8")
    out = tmp_path / "out"
    assert run(out, "simulate", "--config", str(config)) == app.EXIT_FAILURE
    error = load(out / "error.json")
    assert error["error"] == "validation"
    assert error["field"] == "kr"


def test_infeasible_profile_fails(tmp_path):
    assert run(tmp_path, "simulate", *SMALL, "--coeffs", "0.45,0") == app.EXIT_FAILURE
    assert load(tmp_path / "error.json")["error"] == "infeasible-profile"


def test_unwritable_log_is_reported(tmp_path, capsys):
    (tmp_path / "raceway.log").mkdir()
    assert run(tmp_path, "simulate", *SMALL) == app.EXIT_FAILURE
    error = load(tmp_path / "error.json")
    assert error["error"] == "output"
    assert "raceway.log" in error["message"]
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "output"


def test_unexpected_exception_is_reported(tmp_path, monkeypatch):
    def broken(self, spec, params):
        raise ValueError("broken handler")

    monkeypatch.setattr(app.RacewayApplication, "run_export_profile", broken)
    assert run(tmp_path, "export-profile", *SMALL) == app.EXIT_FAILURE
    error = load(tmp_path / "error.json")
    assert error["error"] == "internal"
    assert error["exception"] == "ValueError"
    assert "broken handler" in error["message"]
    assert (tmp_path / "timing.json").exists()


def test_workers_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RACEWAY_WORKERS", "3")
    assert app.spec_from_args(["search", "--regime", "fixed"]).workers == 3
    assert app.spec_from_args(["search", "--workers", "2"]).workers == 2
    monkeypatch.setenv("RACEWAY_WORKERS", "many")
    assert run(tmp_path, "search", "--regime", "fixed") == app.EXIT_USAGE


def test_grad_check_passes(tmp_path):
    assert run(tmp_path, "grad-check", "--instances", "3", "--seed", "7") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["passed"] is True
    assert len(result["instances"]) == 3
    table = pd.read_csv(tmp_path / "table.csv")
    assert set(table["instance"]) == {0, 1, 2}


def test_optimize_writes_profile(tmp_path):
    assert run(tmp_path, "optimize", *SMALL, "--regime", "variable", "--perm", "3-1-2", "--plots", "off") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["objective"] >= result["initial_objective"]
    assert result["r1"] >= -1e-12
    assert len(result["coefficients"]) == 3
    table = pd.read_csv(tmp_path / "table.csv")
    assert list(table.columns[-3:]) == ["a0", "a1", "a2"]


def test_search_output_does_not_depend_on_workers(tmp_path):
    one, two = tmp_path / "one", tmp_path / "two"
    assert run(one, "search", *SMALL, "--regime", "fixed", "--workers", "1") == app.EXIT_OK
    assert run(two, "search", *SMALL, "--regime", "fixed", "--workers", "2") == app.EXIT_OK
    for name in ("result.json", "table.csv", "profile.csv", "topography.svg"):
        assert (one / name).read_bytes() == (two / name).read_bytes(), name
    assert load(two / "timing.json")["workers"] == 2
    table = pd.read_csv(one / "table.csv")
    assert len(table) == 6
    assert load(one / "result.json")["sigma"] in set(table["sigma"])


def test_sweep_length(tmp_path):
    assert run(tmp_path, "sweep-length", "--Nz", "2", "--M", "1", "--regime", "fixed", "--lengths", "1,2") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert [row["L"] for row in result["rows"]] == [1.0, 2.0]
    assert (tmp_path / "sweep.svg").exists()


def test_nz_convergence_with_mapping(tmp_path):
    args = ["nz-convergence", "--L", "1", "--M", "0", "--nz-range", "1:3", "--mapping", str(DATA / "nz_mapping.json")]
    assert run(tmp_path, *args) == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["family"] == "mapping"
    rows = result["rows"]
    assert [row["sigma"] for row in rows] == ["1", "", "2-3-1"]
    assert rows[1]["objective"] == "nan"
    table = pd.read_csv(tmp_path / "table.csv")
    assert len(table) == 3


def test_export_profile(tmp_path):
    assert run(tmp_path, "export-profile", *SMALL, "--coeffs", "0.02,0.01") == app.EXIT_OK
    result = load(tmp_path / "result.json")
    assert result["volume_per_width"] == pytest.approx(0.4)
    assert result["subcritical"] is True
    assert result["min_height"] > result["height_floor"]
    profile = pd.read_csv(tmp_path / "profile.csv")
    assert profile["h"].iloc[0] == 0.4
    assert list(profile.columns) == ["x", "h", "zb", "eta", "u", "Fr"]
    trajectories = pd.read_csv(tmp_path / "trajectories.csv")
    assert list(trajectories.columns) == ["x", "z1", "z2", "z3"]
    assert len(trajectories) == len(profile)
    assert (trajectories["z1"] > trajectories["z3"]).all()
