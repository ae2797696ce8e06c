import json

import numpy as np
import pytest

from nvthermo.runner import config as C
from nvthermo.runner import scenarios as S
from nvthermo.runner.cli import main
from nvthermo.runner.run import COMPLETE, INCOMPLETE, read_table, run_scenario

SMALL_CAL = """
scenario = "calibration_sweep"
master_seed = 3
[calibration]
c_t = -74.2
[calibration_sweep]
truth_c_t = -74.2
temperatures = [295.8, 295.9, 296.0, 296.1, 296.2]
tau_max = 400.0
n_tau = 81
interval_minutes = 5.0
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# --- configuration ---------------------------------------------------------------

def test_unknown_scenario_names_field():
    with pytest.raises(C.ConfigError) as info:
        C.resolve({"scenario": "weather_forecast"})
    assert info.value.errors[0][0] == "scenario"


def test_schema_errors_carry_paths():
    with pytest.raises(C.ConfigError) as info:
        C.resolve({"scenario": "drift_track", "readout": {"counts_bright": -1},
                   "drift_track": {"n_tau": 2, "bogus": 1}})
    paths = {p for p, _ in info.value.errors}
    assert {"readout.counts_bright", "drift_track.n_tau", "drift_track"} <= paths


def test_cross_field_checks():
    with pytest.raises(C.ConfigError) as info:
        C.resolve({"scenario": "drift_track", "readout": {"counts_bright": 0.01, "counts_dark": 0.02}})
    assert info.value.errors[0][0] == "readout.counts_bright"


def test_defaults_and_digest():
    a = C.resolve({"scenario": "drift_track"})
    b = C.resolve({"scenario": "drift_track", "output_dir": "elsewhere", "description": "x"})
    assert a["drift_track"]["t_d"] == 829.0 and "decay_study" not in a
    assert C.config_digest(a) == C.config_digest(b)
    c = C.resolve({"scenario": "drift_track", "master_seed": 1})
    assert C.config_digest(a) != C.config_digest(c)


def test_presets_load_and_validate():
    names = C.preset_names()
    assert {"bulk", "nanodiamond", "bulk_drift", "bulk_calibration", "nanodiamond_heat",
            "decay_study"} <= set(names)
    for n in names:
        cfg = C.load_config(f"preset:{n}")
        assert cfg["scenario"] in C.SCENARIOS
    with pytest.raises(C.ConfigError):
        C.load_raw("preset:missing")


def test_unparseable_file(tmp_path):
    with pytest.raises(C.ConfigError):
        C.load_config(write(tmp_path, "scenario = [unterminated"))


# --- heat model -------------------------------------------------------------------

def test_heat_model_shape():
    m = S.HeatSourceModel(2.0, [(1.0, 0.0)], 296.0)
    assert m.temperature_rise(2.0) == pytest.approx(m.temperature_rise(1.0) / 2, rel=1e-15)
    assert m.temperature_rise(1e9) < 1e-8
    with pytest.raises(ValueError):
        m.temperature_rise(0.0)
    with pytest.raises(ValueError):
        S.HeatSourceModel(1.0, [(1.0, 0.0)], 296.0, model="diffusive")


# --- regression helpers ------------------------------------------------------------

def test_slope_fit_exact_and_minimum_points():
    t = np.array([295.0, 296.0, 297.0, 298.0])
    slope, err, icpt, _ = S.fit_slope(t, -74.2 * (t - 296.0))
    assert slope == pytest.approx(-74.2, rel=1e-9)
    assert icpt == pytest.approx(74.2 * 296.0, rel=1e-9)
    with pytest.raises(S.InsufficientDataError):
        S.fit_slope([1.0, 2.0], [1.0, 2.0])


def test_task_seeds_deterministic_and_distinct():
    assert S.task_seeds(1, 2, 5) == S.task_seeds(1, 2, 5)
    assert S.task_seeds(1, 2, 5) != S.task_seeds(1, 3, 5)


# --- runs --------------------------------------------------------------------------

def test_noiseless_calibration_exact(tmp_path):
    cfg = C.resolve({"scenario": "calibration_sweep", "calibration_sweep": {
        "noise": "none", "truth_c_t": -74.2, "tau_max": 400.0, "n_tau": 81}})
    out = S.calibration_sweep(cfg)
    _, rows = out.tables["calibration_points.csv"]
    slope, *_ = S.fit_slope([r[0] for r in rows], [r[3] for r in rows])
    assert slope == pytest.approx(-74.2, rel=1e-9)


def test_calibration_needs_three_points():
    cfg = C.resolve({"scenario": "calibration_sweep",
                     "calibration_sweep": {"temperatures": [295.0, 296.0]}})
    with pytest.raises(S.InsufficientDataError):
        S.calibration_sweep(cfg)


def test_cli_run_directory_contract(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_CAL)
    out = tmp_path / "run"
    assert main(["calibration-sweep", "--config", cfg, "--out", str(out)]) == 0
    assert (out / COMPLETE).exists() and not (out / INCOMPLETE).exists()
    digest = json.loads((out / "config.json").read_text())["config_digest"]
    for f in out.iterdir():
        if f.suffix in (".csv", ".txt"):
            assert f.read_text().startswith(f"# config_digest: {digest}\n")
    # completed runs are protected unless --force is given
    assert main(["calibration-sweep", "--config", cfg, "--out", str(out)]) == 2
    assert main(["calibration-sweep", "--config", cfg, "--out", str(out), "--force"]) == 0
    assert "fitted c_T" in capsys.readouterr().out


def test_summary_derived_from_table(tmp_path):
    out = run_scenario(C.resolve(C.tomllib.loads(SMALL_CAL)), out=tmp_path / "r")
    header, data = read_table(out / "calibration_points.csv")
    assert header == ["temperature_k", "d_mhz", "d_err_khz", "d_minus_dref_khz"]
    lines = S.calibration_summary([tuple(r) for r in data], True, -74.2)
    summary = (out / "summary.txt").read_text()
    for ln in lines:
        assert ln in summary


def test_seed_flag_and_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("NVTHERMO_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = write(tmp_path, SMALL_CAL)
    assert main(["calibration_sweep", "--config", cfg, "--out", "rel", "--seed", "99"]) == 0
    resolved = json.loads((tmp_path / "root" / "rel" / "config.json").read_text())
    assert resolved["config"]["master_seed"] == 99


def test_cli_config_errors(tmp_path):
    assert main(["drift-track", "--config", write(tmp_path, 'scenario = "nope"\n')]) == 2
    assert main(["drift-track", "--config", write(tmp_path, SMALL_CAL)]) == 2
    assert main(["drift-track", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["drift-track", "--workers", "0"]) == 2


def test_runtime_failure_leaves_incomplete_marker(tmp_path):
    text = SMALL_CAL + "[readout]\ncounts_bright = 1e-6\ncounts_dark = 0.0\n"
    out = tmp_path / "fail"
    assert main(["calibration-sweep", "--config", write(tmp_path, text), "--out", str(out)]) == 3
    assert (out / INCOMPLETE).exists() and not (out / COMPLETE).exists()
    assert "NoSignalError" in (out / "error.txt").read_text()


def test_heat_profile_recovers_truth(tmp_path):
    cfg = C.load_config("preset:nanodiamond_heat")
    out = run_scenario(cfg, out=tmp_path / "heat")
    header, data = read_table(out / "heat_profile.csv")
    col = {h: data[:, i] for i, h in enumerate(header)}
    assert np.all(np.abs(col["recovered_rise_k"] - col["true_rise_k"]) < 3 * col["sigma_t_bookkeeping_k"])
    assert "synthetic" in (out / "summary.txt").read_text()


def test_heat_profile_standoff_is_config_error(tmp_path):
    text = 'scenario = "heat_profile"\n[heat_profile]\npositions = [[0.0, 0.0], [1.0, 0.0]]\n'
    assert main(["heat-profile", "--config", write(tmp_path, text), "--out", str(tmp_path / "h")]) == 2


def test_drift_with_reference_file(tmp_path):
    stamps = np.arange(0, 6 * 300 + 60, 60.0)
    temps = 296.0 + 0.01 * np.sin(stamps / 900)
    ref = tmp_path / "ref.csv"
    ref.write_text("timestamp_s,temperature_k\n" + "".join(f"{a},{b}\n" for a, b in zip(stamps, temps)))
    cfg = C.resolve({"scenario": "drift_track", "drift_track": {
        "n_intervals": 6, "interval_minutes": 5.0, "noise": "none", "reference_file": str(ref)}})
    out = run_scenario(cfg, out=tmp_path / "d")
    header, data = read_table(out / "drift.csv")
    assert np.max(np.abs(data[:, header.index("residual_k")])) < 1e-8


def test_sequence_file_format_round_trip(tmp_path):
    from nvthermo.pulse_engine import PulseSequence, d_ramsey_sequence
    p = tmp_path / "seq.jsonl"
    p.write_text(d_ramsey_sequence(3.0).dumps())
    assert PulseSequence.loads(p.read_text()) == d_ramsey_sequence(3.0)
