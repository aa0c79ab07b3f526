import csv
import json
import subprocess
import sys

import pytest

from atomcavity.cli import main
from atomcavity.config import RunConfig
from atomcavity.errors import ValidationError

SMALL = ["--set", "ensemble.n_samples=300"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv("ATOMCAVITY_CONFIG", raising=False)


def test_derive(tmp_path, capsys):
    assert main(["derive", "--out", str(tmp_path)]) == 0
    rows = {r["quantity"]: float(r["value"]) for r in read_csv(tmp_path / "derive.csv")}
    assert rows["finesse"] == pytest.approx(1.01e6, rel=0.01)
    assert rows["kappa_derived_over_2pi"] == pytest.approx(0.47, abs=0.01)
    assert rows["waist"] == pytest.approx(23.2, rel=0.01)
    summary = json.loads((tmp_path / "derive_summary.json").read_text())
    assert summary["config"]["cavity"]["length_um"] == "159"
    assert "finesse" in capsys.readouterr().out


def test_unknown_key_exits_2_without_output(tmp_path):
    out = tmp_path / "run"
    assert main(["average", "--out", str(out), "--set", "drive.bogus=1"]) == 2
    assert not out.exists()
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[nonsense]\na = 1\n")
    assert main(["derive", "--out", str(out), "--config", str(cfg)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("item", ["drive.n_max=2.5", "ensemble.temperature_mK=-1",
                                  "cavity.length_um=200000", "ensemble.mF_weights=1 2 3",
                                  "transmission.g_MHz=0:1"])
def test_invalid_values_exit_2(tmp_path, item):
    assert main(["derive", "--out", str(tmp_path / "x"), "--set", item]) == 2
    assert not (tmp_path / "x").exists()


def test_numerical_failure_exits_3(tmp_path):
    # a one-photon basis cannot hold the drive: the truncation check fails
    code = main(["average", "--out", str(tmp_path / "x"), "--set", "drive.n_max=1",
                 "--set", "drive.n_empty=0.4"])
    assert code == 3
    assert not (tmp_path / "x").exists()


def test_average_csv_columns(tmp_path):
    assert main(["average", "--out", str(tmp_path), *SMALL, "--seed", "9"]) == 0
    (row,) = read_csv(tmp_path / "average.csv")
    assert list(row) == ["temperature_mK", "delta_MHz", "T_rel_mean", "T_rel_stderr", "n_samples", "seed"]
    assert row["seed"] == "9" and row["n_samples"] == "300"


def test_transmission_csv(tmp_path):
    args = ["transmission", "--out", str(tmp_path), "--set", "transmission.g_MHz=0:13:2",
            "--set", "transmission.delta_MHz=24:24:1"]
    assert main(args) == 0
    rows = read_csv(tmp_path / "transmission.csv")
    assert list(rows[0]) == ["g_over_2pi", "delta_pa_over_2pi", "T_rel", "n_photon",
                             "atomic_excitation", "converged"]
    assert float(rows[0]["T_rel"]) == pytest.approx(1.0, abs=1e-4)
    assert float(rows[1]["T_rel"]) == pytest.approx(0.0032, rel=0.02)


def test_grid_dump(tmp_path):
    assert main(["grid-dump", "--out", str(tmp_path), "--set", "grid.x_um=0:0:1"]) == 0
    (row,) = read_csv(tmp_path / "grid.csv")
    assert list(row) == ["x", "y", "z", "g_over_2pi_MHz", "U_dipole_mK", "U_lock_mK", "stark_MHz"]
    assert float(row["g_over_2pi_MHz"]) == pytest.approx(13.0)
    assert float(row["U_dipole_mK"]) == pytest.approx(-0.58)


def test_rerun_from_summary_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--out", str(a), *SMALL, "--seed", "77",
                 "--set", "sweep.time_step_ms=5"]) == 0
    assert main(["sweep", "--out", str(b), "--from-summary", str(a / "sweep_summary.json")]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "user.ini"
    cfg_file.write_text("[drive]\ndelta_MHz = 30\n[ensemble]\ntemperature_mK = 0.2\n")
    assert RunConfig.load().f("drive", "delta_MHz") == 24
    assert RunConfig.load(preset="fig5").f("drive", "delta_MHz") == 44
    c = RunConfig.load(preset="fig5", path=str(cfg_file))
    assert c.f("drive", "delta_MHz") == 30
    assert c.b("ensemble", "node_average") is True
    c = RunConfig.load(preset="fig5", path=str(cfg_file), overrides=["drive.delta_MHz=35"])
    assert c.f("drive", "delta_MHz") == 35
    monkeypatch.setenv("ATOMCAVITY_CONFIG", str(cfg_file))
    assert RunConfig.load().f("ensemble", "temperature_mK") == 0.2
    assert RunConfig.load(use_env=False).f("ensemble", "temperature_mK") == 0.17


def test_seed_and_workers_flags(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["average", "--out", str(a), *SMALL, "--workers", "1"]) == 0
    assert main(["average", "--out", str(b), *SMALL, "--workers", "2"]) == 0
    assert (a / "average.csv").read_bytes() == (b / "average.csv").read_bytes()


def test_override_syntax():
    with pytest.raises(ValidationError):
        RunConfig.load(overrides=["no_equals_sign"])
    with pytest.raises(ValidationError):
        RunConfig.load(preset="fig99")


def test_version_and_entry_point():
    out = subprocess.run([sys.executable, "-m", "atomcavity.cli", "--version"],
                         capture_output=True, text=True, check=True).stdout
    info = json.loads(out)
    assert info["version"] and len(info["defaults_hash"]) == 16


def test_trace_from_event_file(tmp_path):
    ev = tmp_path / "events.json"
    ev.write_text(json.dumps([{"t_s": 0.05, "kind": "insertion", "node_index": 0},
                              {"t_s": 0.15, "kind": "removal"}]))
    args = ["trace", "--out", str(tmp_path / "o"), *SMALL, "--set", f"detection.events_json={ev}",
            "--set", "detection.duration_ms=200", "--set", "detection.probe_on_ms=0"]
    assert main(args) == 0
    rows = read_csv(tmp_path / "o" / "trace.csv")
    assert list(rows[0]) == ["t_s", "counts", "true_rate", "node_index"]
    assert len(rows) == 200
    assert rows[100]["node_index"] == "0" and rows[10]["node_index"] == "-1"
