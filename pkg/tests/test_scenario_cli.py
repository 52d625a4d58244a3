import json

import numpy as np
import pytest

from conftest import two_node
from gridlevels.cli import main
from gridlevels.dynamics import Trace
from gridlevels.errors import ConfigError, ConvergenceError, StabilityError
from gridlevels.network import graph_to_dict
from gridlevels.scenario import (Report, Scenario, default_scenario, env_log_level, exit_code,
                                 load_scenario, run_batch, run_scenario, variance_metrics)

SMALL = {
    "network": {"multilevel": {"counts": {"5": 1, "4": 3, "3": 9}, "seed": 3}},
    "perturbation": {"radius": 0.01, "seed": 5},
    "sim": {"dt": 0.005, "T": 2.0, "controller": "distributed"},
    "certificate": {"lipschitz_samples": 16},
}


def _write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    sc = Scenario.from_dict(SMALL)
    return run_scenario(sc, out), out


def test_bundled_scenario_runs(tmp_path, capsys):
    code = main(["run", "--out", str(tmp_path)])
    assert code == 0
    rep = Report.from_json(tmp_path / "report.json")
    assert rep["status"] == "ok"
    for key in ("validation", "paper_sufficient", "direct", "region", "closed_loop_stable",
                "bound_holds"):
        assert rep["verdicts"][key] == "pass", key
    assert (tmp_path / "trace_distributed.csv").exists()
    assert rep["gains"]["J_c"] <= rep["gains"]["J_d_coupled"]


def test_small_report_sections(small_report):
    rep, out = small_report
    assert rep.ok
    assert rep["steady_state"]["iterations"] >= 1
    assert rep["certificate"]["L_is_estimate"] is True
    assert rep["reference_output"] == "fixed"
    assert rep["simulation"]["final_norm"] < rep["simulation"]["initial_norm"]
    tr = Trace.from_csv(rep["simulation"]["trace"])
    assert tr.times[-1] == pytest.approx(2.0)


def test_report_roundtrip(small_report, tmp_path):
    rep, _ = small_report
    path = tmp_path / "r.json"
    rep.to_json(path)
    back = Report.from_json(path)
    assert back == rep
    assert back.to_json() == rep.to_json()


def test_infeasible_scenario_exit_3(tmp_path):
    g = two_node(p2=2.0, q=10.0)
    (tmp_path / "g.json").write_text(json.dumps(graph_to_dict(g)))
    path = _write(tmp_path, {"network": {"graph_file": "g.json"}, "sim": {"T": 0.1}})
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    rep = Report.from_json(tmp_path / "o" / "report.json")
    assert rep["errors"][0]["stage"] == "steady_state"
    assert rep["errors"][0]["type"] == "ConvergenceError"
    assert rep["steady_state"] == {"status": "skipped"}


def test_open_loop_skips_gains(tmp_path):
    data = dict(SMALL, sim={"dt": 0.005, "T": 1.0, "controller": "open"})
    rep = run_scenario(Scenario.from_dict(data), tmp_path)
    assert rep.ok
    assert rep["gains"] == {"status": "skipped"}
    assert rep["verdicts"]["bound_holds"] == "skipped"
    assert "J_trace" not in rep["simulation"]
    assert not (tmp_path / "gains.json").exists()


@pytest.mark.parametrize("bad", [
    {"sim": {"dt": -1.0}},
    {"sim": {"controller": "fuzzy"}},
    {"perturbation": {"radius": -0.1}},
    {"network": {}},
    {"colour": "blue"},
])
def test_config_errors_exit_2(tmp_path, bad):
    data = dict(SMALL, **bad)
    path = _write(tmp_path, data)
    with pytest.raises(ConfigError):
        load_scenario(path)
    assert main(["build", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_unreadable_config_exit_2(tmp_path):
    assert main(["build", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_mapping():
    assert exit_code(ConfigError("x")) == 2
    assert exit_code(ConvergenceError("x")) == 3
    assert exit_code(StabilityError("x")) == 4
    assert exit_code(RuntimeError("x")) == 1


def test_env_log_level(monkeypatch):
    monkeypatch.delenv("GRIDLEVELS_LOG", raising=False)
    assert env_log_level() == "WARNING"
    monkeypatch.setenv("GRIDLEVELS_LOG", "debug")
    assert env_log_level() == "DEBUG"


def test_default_scenario_loads():
    sc = default_scenario()
    assert sc.controller == "distributed"
    assert sc.sim["dt"] == 0.001 and sc.sim["T"] == 20.0


def test_standalone_subcommands(tmp_path, capsys):
    path = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    base = ["--config", str(path), "--out", str(out)]
    assert main(["build"] + base) == 0
    built = json.loads(capsys.readouterr().out)
    assert built["nodes"] == 13 and built["validation_passed"]
    assert (out / "graph.json").exists()
    assert main(["steady"] + base) == 0
    assert json.loads(capsys.readouterr().out)["residual_norm"] < 1e-10
    assert main(["certify"] + base) == 0
    assert json.loads(capsys.readouterr().out)["verdicts"]["direct"] == "pass"
    assert main(["gains"] + base) == 0
    gains = json.loads(capsys.readouterr().out)
    assert "F_d" not in gains and gains["holds"]
    assert main(["simulate", "--controller", "central"] + base) == 0
    assert json.loads(capsys.readouterr().out)["controller"] == "central"
    assert main(["compare"] + base) == 0
    rows = json.loads(capsys.readouterr().out)
    assert set(rows) == {"open", "distributed", "central"}
    assert (out / "compare.json").exists()
    assert main(["batch", "--seeds", "2"] + base) == 0
    assert json.loads(capsys.readouterr().out)["n_seeds"] == 2


def test_batch_single_seed_matches_scenario(small_report, tmp_path):
    rep, _ = small_report
    res = run_batch(Scenario.from_dict(SMALL), 1, out=tmp_path)
    row = res["rows"][0]
    assert row["seed"] == SMALL["perturbation"]["seed"]
    sim = rep["simulation"]
    assert row["distributed_final_norm"] == sim["final_norm"]
    assert row["distributed_frequency_variance"] == sim["frequency_variance"]
    assert row["distributed_voltage_variance"] == sim["voltage_variance"]
    assert row["J_d"] == pytest.approx(rep["gains"]["J_d_coupled"], rel=1e-12)
    assert row["J_c"] == pytest.approx(rep["gains"]["J_c"], rel=1e-12)


def test_batch_deterministic_and_mean(tmp_path):
    sc = Scenario.from_dict(SMALL)
    a = run_batch(sc, 3, out=tmp_path / "a", master_seed=100)
    b = run_batch(sc, 3, out=tmp_path / "b", master_seed=100)
    assert a == b
    assert (tmp_path / "a" / "batch.csv").read_text() == (tmp_path / "b" / "batch.csv").read_text()
    assert [r["seed"] for r in a["rows"]] == [100, 101, 102]
    for key, val in a["mean"].items():
        assert val == pytest.approx(np.mean([r[key] for r in a["rows"]]), rel=1e-12, abs=1e-300)


def test_batch_parallel_matches_serial(tmp_path):
    sc = Scenario.from_dict(SMALL)
    a = run_batch(sc, 2, out=tmp_path / "a", controllers=("open", "distributed"))
    b = run_batch(sc, 2, out=tmp_path / "b", workers=2, controllers=("open", "distributed"))
    assert a["rows"] == b["rows"]


def test_batch_rejects_zero_seeds():
    with pytest.raises(ConfigError):
        run_batch(Scenario.from_dict(SMALL), 0)


def test_variance_metrics_zero_at_equilibrium(small_graph, small_state):
    times = np.array([0.0, 1.0])
    tr = Trace(times, np.tile(small_state.full(), (2, 1)))
    assert variance_metrics(small_graph, small_state, tr) == (0.0, 0.0)
