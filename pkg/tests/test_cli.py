import csv
import json

import numpy as np
import pytest

from ipatlc.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

from conftest import scenario_path


def _small_scenario(tmp_path, groups=(0.02, 0.01, 0.01, 0.01), **sim):
    doc = json.loads(scenario_path("grid_2x3_uncongested").read_text())
    doc["demand"]["groups"] = list(groups)
    doc["sim"].update(sim)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_outputs_and_audit_passes(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["simulate", "--scenario", str(_small_scenario(tmp_path)), "--seed", "0",
                 "--horizon", "1000", "--out", str(out)])
    assert code == EXIT_OK
    for name in ("events_seed0.csv", "trajectories_seed0.csv", "metrics_seed0.json"):
        assert (out / name).stat().st_size > 0
    metrics = json.loads((out / "metrics_seed0.json").read_text())
    assert metrics["conservation_ok"]
    assert not any(metrics["invariant_violations"].values())
    assert json.loads(capsys.readouterr().out)[0]["seed"] == 0


def test_zero_demand_metrics_are_zero(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(scenario_path("zero_demand")), "--out", str(out)]) == EXIT_OK
    metrics = json.loads((out / "metrics_seed0.json").read_text())
    for key in ("cost", "mean_waiting_time", "time_distance_ratio", "total_queue_integral", "shed"):
        assert metrics[key] == 0.0


@pytest.mark.parametrize("content", ["{not json", json.dumps({"grid": {"rows": 0, "cols": 3}}),
                                     json.dumps({"network": {"intersections": []}})])
def test_malformed_scenario_exits_invalid(tmp_path, capsys, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert main(["simulate", "--scenario", str(path), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "error:" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["simulate"],
    ["simulate", "--scenario", "x.json", "--horizon", "-5"],
    ["benchmark", "--cols", "a,b"],
])
def test_bad_arguments_exit_invalid(argv):
    assert main(argv) == EXIT_INVALID


def test_event_cap_is_a_runtime_diagnostic(tmp_path, capsys):
    path = _small_scenario(tmp_path, event_cap=30)
    assert main(["simulate", "--scenario", str(path), "--seed", "0", "--horizon", "1000",
                 "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "event cap" in capsys.readouterr().err


def test_rerun_gives_identical_files(tmp_path):
    path = _small_scenario(tmp_path)
    for tag in ("a", "b"):
        assert main(["simulate", "--scenario", str(path), "--seed", "3", "--horizon", "800",
                     "--out", str(tmp_path / tag)]) == EXIT_OK
    for name in ("events_seed3.csv", "trajectories_seed3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_step_override_gives_flat_history(tmp_path):
    out = tmp_path / "out"
    code = main(["optimize", "--scenario", str(_small_scenario(tmp_path)), "--seed", "0",
                 "--horizon", "3000", "--rho0", "0", "--out", str(out)])
    assert code == EXIT_OK
    rows = _rows(out / "history_seed0.csv")
    assert len(rows) == 3
    thetas = np.array([[float(v) for k, v in r.items() if k.startswith("theta_")] for r in rows])
    assert np.all(thetas == thetas[0])
    assert json.loads((out / "summary.json").read_text())["windows"] == 3


def test_compare_webster_zero_demand_identical(tmp_path):
    out = tmp_path / "out"
    assert main(["compare-webster", "--scenario", str(scenario_path("zero_demand")),
                 "--out", str(out)]) == EXIT_OK
    for row in _rows(out / "paired.csv"):
        assert float(row["adaptive_waiting_time"]) == float(row["webster_waiting_time"]) == 0.0


def test_adapt_rejects_schedule_past_horizon(tmp_path):
    path = _small_scenario(tmp_path)
    assert main(["adapt", "--scenario", str(path), "--seed", "0", "--horizon", "3000",
                 "--t-on", "1000", "--t-off", "5000", "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_adapt_revert_at_horizon_is_flagged(tmp_path, capsys):
    path = _small_scenario(tmp_path)
    out = tmp_path / "o"
    assert main(["adapt", "--scenario", str(path), "--seed", "0", "--horizon", "3000",
                 "--t-on", "1000", "--t-off", "3000", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "adapt_summary.json").read_text())
    assert summary["no_recovery_segment"]
    flags = [int(r["perturbed"]) for r in _rows(out / "adapt_history.csv")]
    assert flags == [0, 1, 1]


def test_benchmark_small_grid(tmp_path):
    out = tmp_path / "out"
    assert main(["benchmark", "--cols", "1,2", "--horizon", "300", "--repeats", "1",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "benchmark.csv")
    assert [int(r["n"]) for r in rows] == [1, 2]
    assert all(float(r["events"]) > 0 for r in rows)
