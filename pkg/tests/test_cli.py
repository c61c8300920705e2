import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import chainmem.protocol as protocol
from chainmem.cli import SWEEP_HEADER, main

pytestmark = pytest.mark.filterwarnings("ignore::chainmem.hamiltonian.DisconnectedChainWarning")

RANDOM_CHAIN = {"model": "heisenberg", "n_a": 2, "n_c": 2, "n_b": 1, "coupling_range": [0.5, 1.5], "seed": 4}


def write(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_simulate_vacuum_input(tmp_path, capsys):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 6},
                           "input": [["00", [1, 0]]]})
    code, out = run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert len(rows) == 6
    assert all(float(r["success_prob"]) == 1.0 for r in rows)
    assert out.out.strip().splitlines()[-1].startswith("fidelity_bound=")


def test_simulate_all_up_outputs(tmp_path, capsys):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 30}, "input": "all_up"})
    code, out = run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0
    bound = float(out.out.strip().splitlines()[-1].split("=")[1])
    tmap = json.loads((tmp_path / "o" / "transfer_map.json").read_text())
    assert abs(bound - tmap["recovery"]["worst_case_fidelity_bound"]) == 0
    assert tmap["memory_bits"] == 30 and len(tmap["columns"]) == 4
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    for r in rows:
        for key in ("success_prob", "fidelity_bound", "P_1", "P_2"):
            assert 0.0 <= float(r[key]) <= 1.0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["files"] == ["trajectory.csv", "transfer_map.json"]
    assert manifest["seed_trail"] == [4]
    assert manifest["config"]["chain"] == RANDOM_CHAIN


def test_simulate_is_reproducible_from_manifest(tmp_path, capsys):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 0.9, "steps": 20}, "input": "plus_state"})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, "simulate", "--config", str(tmp_path / "a" / "manifest.json"),
               "--out", str(tmp_path / "b"))[0] == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_seed_flag_overrides(tmp_path, capsys):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 3}})
    run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "a"))
    run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5")
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["seed_trail"] == [5]
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_transfer_map_row_limit(tmp_path, capsys):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 10},
                           "outputs": {"transfer_map_rows": 5}})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path))[0] == 0
    tmap = json.loads((tmp_path / "transfer_map.json").read_text())
    assert tmap["truncated"] and len(tmap["patterns"]) == 5
    assert tmap["omitted_weight"] >= 0


def test_resource_guard_exit_code(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(protocol, "MAX_AMPLITUDES", 20)
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 5}})
    code, out = run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path))
    assert code == 2
    assert "survival-bound mode" in out.err


def test_config_errors_exit_one(tmp_path, capsys):
    assert run(capsys, "simulate", "--config", str(tmp_path / "nope.json"))[0] == 1
    cfg = write(tmp_path, {"chain": {**RANDOM_CHAIN, "preset": "uniform"}, "schedule": {"tau": 1, "steps": 1}})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path))[0] == 1
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1}})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path))[0] == 1
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1, "steps": 1}})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path), "--jobs", "0")[0] == 1


def test_numerical_failure_exit_three(tmp_path, capsys):
    chain = {"model": "xy", "n_a": 1, "n_c": 2, "n_b": 1, "couplings": [1, 1, 0]}
    cfg = write(tmp_path, {"chain": chain, "schedule": {"tau": 1.0, "survival_threshold": 1e-3}})
    assert run(capsys, "simulate", "--config", cfg, "--out", str(tmp_path))[0] == 3


def test_analyze_decoupled_chain(tmp_path, capsys):
    chain = {"model": "xy", "n_a": 1, "n_c": 3, "n_b": 1, "couplings": [1, 1, 1, 0]}
    cfg = write(tmp_path, {"chain": chain, "analysis": {"tau_grid": {"start": 0.2, "stop": 4, "num": 20}}})
    assert run(capsys, "analyze", "--config", cfg, "--out", str(tmp_path))[0] == 0
    report = json.loads((tmp_path / "condition.json").read_text())
    assert report["sectors"][0]["n"] == 1 and report["sectors"][0]["violated"]
    rows = read_csv(tmp_path / "rho_vs_tau.csv")
    assert len(rows) == 20 and all(r["flag"] == "1" for r in rows)
    assert report["common_unflagged_taus"] == []


def test_analyze_uniform_xy(tmp_path, capsys):
    chain = {"model": "xy", "n_a": 1, "n_c": 4, "n_b": 1, "preset": "uniform"}
    cfg = write(tmp_path, {"chain": chain, "schedule": {"tau": 1.0, "steps": 15},
                           "analysis": {"tau_grid": [0.5, 1.0, 1.5], "sectors": [1, 2, 3, 4, 5, 6]}})
    assert run(capsys, "analyze", "--config", cfg, "--out", str(tmp_path))[0] == 0
    report = json.loads((tmp_path / "condition.json").read_text())
    assert not report["any_violated"] and len(report["sectors"]) == 6
    survival = read_csv(tmp_path / "survival.csv")
    values = [float(r["value"]) for r in survival]
    assert len(values) == 15 and np.all(np.diff(values) <= 1e-15)


def test_analyze_empty_grid(tmp_path, capsys):
    chain = {"model": "xy", "n_a": 1, "n_c": 1, "n_b": 1, "preset": "uniform"}
    cfg = write(tmp_path, {"chain": chain, "analysis": {"tau_grid": []}})
    assert run(capsys, "analyze", "--config", cfg, "--out", str(tmp_path))[0] == 1


def test_sweep_seeds(tmp_path, capsys):
    config = {"chain": {**RANDOM_CHAIN, "n_a": 1, "n_c": 3, "n_b": 2},
              "schedule": {"tau": 1.0, "steps": 12}, "input": "all_up",
              "sweep": {"seeds": list(range(10))}}
    cfg = write(tmp_path, config)
    assert run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "3")[0] == 0
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "sweep.csv")
    assert list(rows[0]) == SWEEP_HEADER
    assert [int(r["seed"]) for r in rows] == list(range(10))
    for r in rows:
        assert np.isfinite(float(r["fitted_rate"])) and np.isfinite(float(r["model_rate"]))
        assert 0 <= float(r["success_prob"]) <= 1


def test_sweep_transfer_time_grows_superlinearly(tmp_path, capsys):
    config = {"chain": {"model": "heisenberg", "n_a": 1, "n_c": 2, "n_b": 1, "preset": "uniform"},
              "schedule": {"optimize": {"steps": 25, "tau_window": "auto", "grid_points": 40}},
              "sweep": {"lengths": [4, 6, 8], "fidelity_target": 0.9}}
    cfg = write(tmp_path, config)
    assert run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path))[0] == 0
    times = [float(r["time_to_target"]) for r in read_csv(tmp_path / "sweep.csv")]
    assert np.all(np.isfinite(times)) and np.all(np.diff(times) > 0)
    assert times[2] / times[0] > 2.0


def test_optimize_writes_schedule(tmp_path, capsys):
    config = {"chain": RANDOM_CHAIN, "schedule": {"optimize": {"steps": 5, "tau_window": [0.5, 2.0],
                                                               "grid_points": 16}}}
    cfg = write(tmp_path, config)
    assert run(capsys, "optimize", "--config", cfg, "--out", str(tmp_path))[0] == 0
    sched = json.loads((tmp_path / "schedule.json").read_text())
    assert len(sched["taus"]) == 5 and all(0.5 <= t <= 2.0 for t in sched["taus"])
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 2}}, "plain.json")
    assert run(capsys, "optimize", "--config", cfg, "--out", str(tmp_path))[0] == 1


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, {"chain": RANDOM_CHAIN, "schedule": {"tau": 1.0, "steps": 2}})
    proc = subprocess.run([sys.executable, "-m", "chainmem", "simulate", "--config", cfg, "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.strip().splitlines()[-1].startswith("fidelity_bound=")
