"""Scenario configuration: TOML files with one table per component."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..bath_sim import BathConfig
from ..measurement_model import CalibrationSpec, HeatingOffsets, ReadoutModel
from ..spin_model import NitrogenSpec, SpinSystemSpec

SCENARIOS = ("decay_study", "calibration_sweep", "drift_track", "sensitivity_sweep", "heat_profile")


class ConfigError(ValueError):
    """Schema violations; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path or '<root>'}: {msg}" for path, msg in self.errors]
        super().__init__("invalid scenario config:\n  " + "\n  ".join(lines))


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_num_list = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "scenario": {"enum": list(SCENARIOS)},
    "master_seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "description": {"type": "string"},
    "spin": _obj({
        "d_zfs": _pos, "gamma_e": _pos, "b_field": _vec3, "delta_d": _num,
        "nitrogen": _obj({"isotope": {"enum": ["N14", "N15"]}, "a_par": _num, "a_perp": _num,
                          "gamma_n": _num, "quadrupole": _num}),
    }),
    "bath": _obj({
        "concentration": {"type": "number", "minimum": 0, "maximum": 1},
        "cutoff_radius": _pos, "b_z": _num, "lattice_constant": _pos,
        "exclusion_radius": {"type": "number", "minimum": 0}, "max_spins": _int_pos,
    }),
    "readout": _obj({
        "counts_bright": _pos, "counts_dark": {"type": "number", "minimum": 0},
        "readouts_per_point": _int_pos, "sequence_overhead": {"type": "number", "minimum": 0},
    }),
    "calibration": _obj({"c_t": _num, "d_ref": _pos, "t_ref": _pos}),
    "heating": _obj({"laser_mk": _num, "microwave_mk": _num}),
    "decay_study": _obj({
        "settings": {"type": "array", "minItems": 1, "items": _obj({
            "concentration": {"type": "number", "minimum": 0, "maximum": 1},
            "b_z": _num, "cutoff_radius": _pos, "label": {"type": "string"}},
            required=("concentration", "b_z"))},
        "n_realizations": _int_pos, "tau_min": _pos, "tau_max": _pos,
        "points_per_decade": {"type": "integer", "minimum": 1, "maximum": 64},
        "pair_cutoff": _pos, "sequence": {"enum": ["d_ramsey", "hahn_echo", "ramsey"]},
    }),
    "calibration_sweep": _obj({
        "temperatures": _num_list, "truth_c_t": _num, "noise": {"enum": ["poisson", "none"]},
        "interval_minutes": _pos, "tau_max": _pos, "n_tau": {"type": "integer", "minimum": 8},
        "t_d": _pos, "stretch": _pos, "fringe_offset_khz": _pos,
    }),
    "drift_track": _obj({
        "n_intervals": {"type": "integer", "minimum": 2}, "interval_minutes": _pos,
        "drift_amplitude_mk": {"type": "number", "minimum": 0}, "drift_period_hours": _pos,
        "reference_noise_mk": {"type": "number", "minimum": 0},
        "reference_cadence_s": _pos, "reference_file": {"type": "string"},
        "noise": {"enum": ["poisson", "none"]},
        "tau_max": _pos, "n_tau": {"type": "integer", "minimum": 8},
        "t_d": _pos, "stretch": _pos, "fringe_offset_khz": _pos,
    }),
    "sensitivity_sweep": _obj({
        "tau_max_values": _num_list, "n_tau": {"type": "integer", "minimum": 8},
        "fringe_khz": _pos, "t_d": _pos, "stretch": _pos, "repetitions": _int_pos,
        "slope_tau": _pos, "slope_t_d": _pos, "slope_rate_hz": _pos, "target_sigma_t_mk": _pos,
    }),
    "heat_profile": _obj({
        "source_power": _pos, "positions": {"type": "array", "minItems": 1, "items": {
            "type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        "ambient": _pos, "model": {"enum": ["point_source_steady_state"]},
        "min_standoff": _pos, "measurement_time_s": _pos,
        "tau_max": _pos, "n_tau": {"type": "integer", "minimum": 8},
        "t_d": _pos, "stretch": _pos, "fringe_offset_khz": _pos,
        "noise": {"enum": ["poisson", "none"]}, "reference_noise_floor_mk": _pos,
    }),
}, required=("scenario",))


DEFAULTS = {
    "master_seed": 0,
    "output_dir": "runs/default",
    "spin": {"d_zfs": 2870.685, "gamma_e": 28.024, "b_field": [0.0, 0.0, 50.0], "delta_d": 0.0},
    "bath": {"concentration": 0.011, "cutoff_radius": 3.0, "b_z": 50.0},
    "readout": {"counts_bright": 0.03, "counts_dark": 0.021, "sequence_overhead": 1.3},
    "calibration": {"c_t": -78.6, "d_ref": 2870.685, "t_ref": 296.0},
    "heating": {"laser_mk": 3.0, "microwave_mk": 0.0},
    "decay_study": {
        "settings": [
            {"concentration": 0.01, "b_z": 5.0, "label": "c=0.01,B=5mT"},
            {"concentration": 0.01, "b_z": 50.0, "label": "c=0.01,B=50mT"},
            {"concentration": 1e-5, "b_z": 50.0, "cutoff_radius": 10.0, "label": "c=1e-5,B=50mT"},
        ],
        "n_realizations": 20, "tau_min": 0.1, "tau_max": 1e5, "points_per_decade": 16,
        "pair_cutoff": 1.0, "sequence": "d_ramsey",
    },
    "calibration_sweep": {
        "temperatures": [295.75, 295.8, 295.85, 295.9, 295.95, 296.05, 296.1, 296.15, 296.2, 296.25],
        "truth_c_t": -78.6, "noise": "poisson", "interval_minutes": 17.0,
        "tau_max": 1000.0, "n_tau": 201, "t_d": 829.0, "stretch": 1.0, "fringe_offset_khz": 40.0,
    },
    "drift_track": {
        "n_intervals": 85, "interval_minutes": 17.0, "drift_amplitude_mk": 50.0,
        "drift_period_hours": 24.0, "reference_noise_mk": 0.0, "reference_cadence_s": 60.0,
        "noise": "poisson", "tau_max": 1000.0, "n_tau": 201, "t_d": 829.0, "stretch": 1.0,
        "fringe_offset_khz": 20.0,
    },
    "sensitivity_sweep": {
        "tau_max_values": [100.0, 200.0, 400.0, 800.0], "n_tau": 101, "fringe_khz": 20.0,
        "repetitions": 20, "stretch": 1.0, "slope_tau": 800.0, "slope_t_d": 829.0,
        "slope_rate_hz": 1.0,
    },
    "heat_profile": {
        "source_power": 1.0, "positions": [[0.5, 0.0], [1.0, 0.0], [2.0, 0.0], [4.0, 0.0]],
        "ambient": 296.0, "model": "point_source_steady_state", "min_standoff": 0.1,
        "measurement_time_s": 60.0, "tau_max": 6.0, "n_tau": 121, "t_d": 3.0, "stretch": 1.0,
        "fringe_offset_khz": 1000.0, "noise": "poisson", "reference_noise_floor_mk": 130.0,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errs:
        raise ConfigError([(".".join(str(p) for p in e.absolute_path), e.message) for e in errs])


def resolve(raw: dict) -> dict:
    """Validate ``raw`` and fill defaults; only the active scenario's table is kept."""
    validate(raw)
    scenario = raw["scenario"]
    base = {k: v for k, v in DEFAULTS.items() if k not in SCENARIOS}
    base[scenario] = DEFAULTS[scenario]
    cfg = _merge(base, {k: v for k, v in raw.items() if k not in SCENARIOS or k == scenario})
    cfg["scenario"] = scenario
    errors = []
    ro = cfg["readout"]
    if not ro["counts_bright"] > ro["counts_dark"]:
        errors.append(("readout.counts_bright", "must exceed readout.counts_dark"))
    if cfg["calibration"]["c_t"] == 0:
        errors.append(("calibration.c_t", "must be non-zero"))
    if errors:
        raise ConfigError(errors)
    return cfg


def load_raw(source) -> dict:
    """Parse a TOML path or ``preset:<name>`` into an unresolved dict."""
    source = str(source)
    if source.startswith("preset:"):
        name = source.split(":", 1)[1]
        res = resources.files("nvthermo.presets") / f"{name}.toml"
        if not res.is_file():
            raise ConfigError([("", f"unknown preset {name!r}; available: {', '.join(preset_names())}")])
        return tomllib.loads(res.read_text())
    try:
        with open(source, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("", f"cannot parse {source}: {exc}")]) from exc
    except OSError as exc:
        raise ConfigError([("", f"cannot read {source}: {exc}")]) from exc


def preset_names() -> list:
    files = resources.files("nvthermo.presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_config(source) -> dict:
    return resolve(load_raw(source))


def config_digest(cfg: dict) -> str:
    """SHA-256 over the result-determining part of a resolved config."""
    payload = {k: v for k, v in cfg.items() if k not in ("output_dir", "description")}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def spin_spec(cfg: dict) -> SpinSystemSpec:
    s = dict(cfg["spin"])
    nitrogen = s.pop("nitrogen", None)
    return SpinSystemSpec(
        d_zfs=s["d_zfs"], gamma_e=s["gamma_e"], b_field=tuple(s["b_field"]),
        delta_d=s.get("delta_d", 0.0),
        nitrogen=NitrogenSpec(**nitrogen) if nitrogen else None)


def readout_model(cfg: dict, readouts_per_point=None) -> ReadoutModel:
    r = dict(cfg["readout"])
    if readouts_per_point is not None:
        r["readouts_per_point"] = int(readouts_per_point)
    return ReadoutModel(**r)


def calibration(cfg: dict) -> CalibrationSpec:
    return CalibrationSpec(**cfg["calibration"])


def heating(cfg: dict) -> HeatingOffsets:
    return HeatingOffsets(**cfg["heating"])


def bath_config(cfg: dict, **overrides) -> BathConfig:
    b = dict(cfg["bath"])
    b.update(overrides)
    return BathConfig(**b)
