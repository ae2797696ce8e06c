"""
Reproducible scenario runs
==========================

The runner binds the modules into seeded experiments. The same runs are
available from the shell as ``nvthermo <scenario> --config preset:<name>``.
"""
import tempfile
from pathlib import Path

from nvthermo.runner import config as C
from nvthermo.runner.run import read_table, run_scenario

print("presets:", C.preset_names())
root = Path(tempfile.mkdtemp())

# Calibration sweep with the bulk preset: recovered slope against the truth.
cal = run_scenario(C.load_config("preset:bulk_calibration"), out=root / "calibration")
print((cal / "summary.txt").read_text())

# A shortened drift track against a synthetic reference thermometer.
cfg = C.resolve({"scenario": "drift_track", "master_seed": 7,
                 "drift_track": {"n_intervals": 12, "drift_amplitude_mk": 20.0}})
drift = run_scenario(cfg, out=root / "drift", workers=2)
header, data = read_table(drift / "drift.csv")
print(header)
print(data[:3])
print((drift / "summary.txt").read_text())

# Heat profile around a synthetic point source, nanodiamond regime.
heat = run_scenario(C.load_config("preset:nanodiamond_heat"), out=root / "heat")
print((heat / "summary.txt").read_text())
print("outputs in", root)
