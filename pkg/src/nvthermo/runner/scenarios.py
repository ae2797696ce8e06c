"""Scenario drivers. Each returns a :class:`RunOutput` of data tables plus a summary
computed from those same tables."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .. import bath_sim
from ..measurement_model import (
    SignalTrace,
    d_ramsey_trace,
    fit_fringe,
    readouts_in,
    sample_counts,
    sensitivity_report,
    slope_point_sigma,
    track_drift,
)
from ..pulse_engine import SEQUENCE_FACTORIES
from . import config as C


class InsufficientDataError(ValueError):
    pass


@dataclass
class RunOutput:
    tables: dict = field(default_factory=dict)  # file name -> (header list, rows)
    texts: dict = field(default_factory=dict)  # file name -> raw text
    summary: list = field(default_factory=list)


def task_seeds(master_seed: int, stream: int, n: int) -> list:
    """Per-task integer seeds, split deterministically from ``(master_seed, stream)``."""
    children = np.random.SeedSequence([master_seed, stream]).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def parallel_map(fn: Callable, tasks: list, workers: int = 1) -> list:
    """Ordered map; the worker count changes speed only."""
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _tau_grid(tau_max, n_tau):
    return np.linspace(0.0, tau_max, n_tau)


def _readouts_for(total_time_s, tau_grid, overhead):
    per_sweep = float(np.sum(np.asarray(tau_grid) + overhead))
    return max(1, int(total_time_s * 1e6 // per_sweep))


def _simulate_trace(args):
    """One D-Ramsey measurement: ideal signal, envelope, Poisson counts."""
    spec, mw_d, d_true, tau, t_d, stretch, readout, seed, noise, timestamp = args
    spec = replace(spec, d_zfs=mw_d, delta_d=0.0)
    delta = (d_true - mw_d) * 1e3
    mean = d_ramsey_trace(spec, delta, tau, t_d, stretch)
    counts = sample_counts(mean, readout, seed) if noise == "poisson" else None
    return SignalTrace(tau, mean, counts, model_truth={"delta_d": delta, "t_d": t_d},
                       timestamp=timestamp, readouts_per_point=readout.readouts_per_point)


# --- decay study -------------------------------------------------------------

def decay_study(cfg: dict, workers: int = 1) -> RunOutput:
    p = cfg["decay_study"]
    spec = C.spin_spec(cfg)
    seq = SEQUENCE_FACTORIES[p["sequence"]](1.0)
    tau = bath_sim.default_tau_grid(p["tau_min"], p["tau_max"], p["points_per_decade"])
    out = RunOutput()
    medians = []
    for k, setting in enumerate(p["settings"]):
        overrides = {"concentration": setting["concentration"], "b_z": setting["b_z"]}
        if "cutoff_radius" in setting:
            overrides["cutoff_radius"] = setting["cutoff_radius"]
        bcfg = C.bath_config(cfg, **overrides)
        ens = bath_sim.ensemble_coherence(spec, bcfg, seq, tau, p["n_realizations"],
                                          master_seed=task_seeds(cfg["master_seed"], 100 + k, 1)[0],
                                          pair_cutoff=p["pair_cutoff"], workers=workers)
        coh = np.array([c.coherence for c in ens.curves])
        mean = coh.mean(axis=0)
        rows = [(t, m.real, m.imag, abs(m)) for t, m in zip(tau, mean)]
        out.tables[f"coherence_{k}.csv"] = (["tau_us", "l_real_mean", "l_imag_mean", "l_abs_mean"], rows)
        abs_rows = [[t] + list(np.abs(coh[:, j])) for j, t in enumerate(tau)]
        out.tables[f"coherence_{k}_realizations.csv"] = (
            ["tau_us"] + [f"abs_l_r{i}" for i in range(len(ens.curves))], abs_rows)
        td_rows = list(zip(range(len(ens.seeds)), ens.seeds, ens.n_spins, ens.t_d, ens.stretch,
                           [c.breakdown_tau for c in ens.curves]))
        out.tables[f"t_d_{k}.csv"] = (
            ["realization", "seed", "n_spins", "t_d_us", "stretch", "cce_breakdown_tau_us"], td_rows)
        out.texts[f"bath_{k}_r0.csv"] = bath_sim.bath_to_csv(
            bath_sim.sample_bath(replace(bcfg, seed=ens.seeds[0])))
        label = setting.get("label", f"c={setting['concentration']},B={setting['b_z']}mT")
        med = summarize_t_d(td_rows)
        medians.append(med)
        out.summary.append(f"setting {k} [{label}]: median T_D = {med:.6g} us "
                           f"over {len(ens.curves)} realizations")
    ordered = all(a < b for a, b in zip(medians, medians[1:]))
    out.summary.append("T_D ordering (settings in listed order, strictly increasing): "
                       + ("holds" if ordered else "violated"))
    return out


def summarize_t_d(td_rows) -> float:
    vals = np.array([r[3] for r in td_rows], dtype=float)
    return float(np.nanmedian(vals))


# --- calibration sweep -----------------------------------------------------

def fit_slope(temperatures, d_khz, d_err_khz=None):
    """Weighted linear regression of D (kHz) on temperature; returns slope, err, intercept, err."""
    t = np.asarray(temperatures, dtype=float)
    d = np.asarray(d_khz, dtype=float)
    if len(t) < 3:
        raise InsufficientDataError("calibration needs at least 3 temperature points")
    t0 = t.mean()
    if d_err_khz is None or not np.all(np.asarray(d_err_khz) > 0):
        coef, cov = np.polyfit(t - t0, d, 1, cov=True) if len(t) > 3 else (np.polyfit(t - t0, d, 1), np.zeros((2, 2)))
    else:
        coef, cov = np.polyfit(t - t0, d, 1, w=1 / np.asarray(d_err_khz), cov="unscaled")
    slope, icpt = coef
    err = np.sqrt(np.clip(np.diag(cov), 0, np.inf))
    return float(slope), float(err[0]), float(icpt - slope * t0), float(err[1])


def calibration_sweep(cfg: dict, workers: int = 1) -> RunOutput:
    p = cfg["calibration_sweep"]
    temps = np.asarray(p["temperatures"], dtype=float)
    if len(temps) < 3:
        raise InsufficientDataError("calibration needs at least 3 temperature points")
    spec = C.spin_spec(cfg)
    cal = C.calibration(cfg)
    truth = replace(cal, c_t=p["truth_c_t"])
    heat = C.heating(cfg)
    tau = _tau_grid(p["tau_max"], p["n_tau"])
    readout = C.readout_model(cfg, _readouts_for(p["interval_minutes"] * 60, tau,
                                                 cfg["readout"]["sequence_overhead"]))
    d_true = truth.d_at(temps + heat.total_k)
    mw_d = float(np.min(d_true)) - p["fringe_offset_khz"] * 1e-3
    seeds = task_seeds(cfg["master_seed"], 200, len(temps))
    tasks = [(spec, mw_d, float(d), tau, p["t_d"], p["stretch"], readout, s, p["noise"], None)
             for d, s in zip(d_true, seeds)]
    traces = parallel_map(_simulate_trace, tasks, workers)
    rows = []
    for temp, tr in zip(temps, traces):
        fit = fit_fringe(tr)
        d_hat = mw_d + fit.frequency * 1e-3
        rows.append((temp, d_hat, fit.frequency_err, (d_hat - cal.d_ref) * 1e3))
    out = RunOutput()
    out.tables["calibration_points.csv"] = (
        ["temperature_k", "d_mhz", "d_err_khz", "d_minus_dref_khz"], rows)
    out.summary.extend(calibration_summary(rows, p["noise"] == "poisson", p["truth_c_t"]))
    out.summary.append(f"readouts per tau point: {readout.readouts_per_point}")
    return out


def calibration_summary(rows, weighted: bool, truth_c_t: float) -> list:
    t = [r[0] for r in rows]
    d = [r[3] for r in rows]
    err = [r[2] for r in rows] if weighted else None
    slope, slope_err, icpt, icpt_err = fit_slope(t, d, err)
    z = (slope - truth_c_t) / slope_err if slope_err > 0 else (0.0 if slope == truth_c_t else math.inf)
    return [f"fitted c_T = {slope!r} +/- {slope_err!r} kHz/K",
            f"intercept (D - d_ref extrapolated to T = 0 K, kHz) = {icpt!r} +/- {icpt_err!r}",
            f"truth c_T = {truth_c_t!r} kHz/K; deviation = {z:.3f} sigma"]


# --- drift tracking ----------------------------------------------------------

def load_reference_series(path) -> np.ndarray:
    """Two-column ``timestamp_s, temperature_k`` file with a header row."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError("reference series must have exactly two columns")
    return data


def drift_track(cfg: dict, workers: int = 1) -> RunOutput:
    p = cfg["drift_track"]
    spec = C.spin_spec(cfg)
    cal = C.calibration(cfg)
    heat = C.heating(cfg)
    tau = _tau_grid(p["tau_max"], p["n_tau"])
    interval_s = p["interval_minutes"] * 60
    readout = C.readout_model(cfg, _readouts_for(interval_s, tau, cfg["readout"]["sequence_overhead"]))
    n = p["n_intervals"]
    stamps = (np.arange(n) + 0.5) * interval_s
    amp = p["drift_amplitude_mk"] * 1e-3
    period = p["drift_period_hours"] * 3600

    def env(t):
        return cal.t_ref + amp * np.sin(2 * np.pi * np.asarray(t) / period)

    if "reference_file" in p:
        reference = load_reference_series(p["reference_file"])
        truth_at = np.interp(stamps, reference[:, 0], reference[:, 1])
    else:
        ref_t = np.arange(0.0, n * interval_s + p["reference_cadence_s"], p["reference_cadence_s"])
        rng = np.random.default_rng(task_seeds(cfg["master_seed"], 301, 1)[0])
        ref_noise = rng.normal(0.0, p["reference_noise_mk"] * 1e-3, ref_t.size) if p["reference_noise_mk"] else 0.0
        reference = np.column_stack([ref_t, env(ref_t) + ref_noise])
        truth_at = env(stamps)
    sensor_t = truth_at + heat.total_k
    d_true = cal.d_at(sensor_t)
    mw_d = float(cal.d_at(cal.t_ref)) - p["fringe_offset_khz"] * 1e-3
    seeds = task_seeds(cfg["master_seed"], 300, n)
    tasks = [(spec, mw_d, float(d), tau, p["t_d"], p["stretch"], readout, s, p["noise"], float(ts))
             for d, s, ts in zip(d_true, seeds, stamps)]
    traces = parallel_map(_simulate_trace, tasks, workers)
    track = track_drift(traces, cal, mw_d, reference=reference, heating=heat)
    ref_at = track.temperature - track.residuals
    rows = list(zip(track.timestamps, track.d_mhz, track.d_err_khz, track.temperature,
                    track.temperature_err, ref_at, track.residuals, track.ok.astype(int)))
    out = RunOutput()
    out.tables["drift.csv"] = (
        ["timestamp_s", "d_mhz", "d_err_khz", "temperature_k", "temperature_err_k",
         "reference_k", "residual_k", "fit_ok"], rows)
    out.tables["reference.csv"] = (["timestamp_s", "temperature_k"], [tuple(r) for r in reference])
    out.summary.extend(drift_summary(rows, cal.c_t))
    out.summary.append(f"readouts per tau point: {readout.readouts_per_point}")
    for k, e in enumerate(track.errors):
        if e:
            out.summary.append(f"interval {k}: fit flagged ({e})")
    return out


def drift_summary(rows, c_t: float) -> list:
    ok = np.array([r[7] for r in rows], dtype=bool)
    res = np.array([r[6] for r in rows], dtype=float)[ok]
    err = np.array([r[4] for r in rows], dtype=float)[ok]
    std = float(np.std(res, ddof=1))
    rms = float(np.sqrt(np.mean(err ** 2)))
    return [f"intervals fitted: {int(ok.sum())} of {len(rows)}",
            f"residual std dev (NV - reference) = {std * 1e3:.6g} mK",
            f"residual std dev in D = {abs(c_t) * std:.6g} kHz",
            f"rms per-point fit uncertainty = {rms * 1e3:.6g} mK",
            f"ratio residual std / rms uncertainty = {std / rms:.6g}"]


# --- sensitivity sweep -------------------------------------------------------

def _sens_task(args):
    fit = fit_fringe(_simulate_trace(args))
    return fit.frequency, fit.frequency_err


def tune_counts_for_sigma(readout, tau, t_d, stretch, readouts, target_sigma_khz):
    """Scale the collected counts at fixed contrast so the slope-point sigma hits a target.

    The shot-noise sigma scales as ``counts_bright ** -1/2`` at fixed contrast.
    """
    s0 = slope_point_sigma(readout, tau, t_d, stretch, readouts)
    factor = (s0 / target_sigma_khz) ** 2
    return replace(readout, counts_bright=readout.counts_bright * factor,
                   counts_dark=readout.counts_dark * factor)


def sensitivity_sweep(cfg: dict, workers: int = 1) -> RunOutput:
    p = cfg["sensitivity_sweep"]
    spec = C.spin_spec(cfg)
    cal = C.calibration(cfg)
    t_d = p.get("t_d", math.inf)
    readout = C.readout_model(cfg)
    out = RunOutput()
    rows = []
    mw_d = spec.d_zfs
    for k, tmax in enumerate(p["tau_max_values"]):
        tau = _tau_grid(tmax, p["n_tau"])
        seeds = task_seeds(cfg["master_seed"], 400 + k, p["repetitions"])
        d_true = mw_d + p["fringe_khz"] * 1e-3
        tasks = [(spec, mw_d, d_true, tau, t_d, p["stretch"], readout, s, "poisson", None) for s in seeds]
        res = np.array(parallel_map(_sens_task, tasks, workers))
        sig_mean = float(res[:, 1].mean())
        sig_emp = float(res[:, 0].std(ddof=1)) if len(res) > 1 else math.nan
        meas_time = readout.readouts_per_point * float(np.sum(tau + readout.sequence_overhead)) * 1e-6
        rep = sensitivity_report(sig_mean, meas_time, cal)
        rows.append((tmax, sig_mean, sig_emp, sig_mean * tmax, meas_time, rep.rate, rep.sigma_t,
                     rep.noise_floor))
    out.tables["sensitivity.csv"] = (
        ["tau_max_us", "sigma_f_khz", "sigma_f_empirical_khz", "sigma_f_times_tau_max",
         "measurement_time_s", "rate_hz", "sigma_t_mk", "noise_floor_mk_rthz"], rows)
    out.summary.extend(sensitivity_summary(rows))

    # fixed-tau slope readout, e.g. the bulk operating point
    tau_s = p["slope_tau"]
    slope_td = p["slope_t_d"]
    meas = 1.0 / p["slope_rate_hz"]
    n_ro = readouts_in(meas, tau_s, readout)
    ro = readout
    if "target_sigma_t_mk" in p:
        ro = tune_counts_for_sigma(readout, tau_s, slope_td, p["stretch"], n_ro,
                                   p["target_sigma_t_mk"] * 1e-3 * abs(cal.c_t))
    sig = slope_point_sigma(ro, tau_s, slope_td, p["stretch"], n_ro)
    rep = sensitivity_report(sig, meas, cal)
    out.tables["slope_point.csv"] = (
        ["tau_us", "t_d_us", "readouts", "counts_bright", "counts_dark", "sigma_f_khz",
         "rate_hz", "sigma_t_mk", "noise_floor_mk_rthz"],
        [(tau_s, slope_td, n_ro, ro.counts_bright, ro.counts_dark, sig, rep.rate, rep.sigma_t,
          rep.noise_floor)])
    out.texts["sensitivity_report.txt"] = "".join(
        f"{k} = {float(v)!r}\n" for k, v in rep.as_dict().items())
    out.summary.append(f"slope point tau={tau_s} us, r={rep.rate:.6g} Hz: sigma_T = {rep.sigma_t:.6g} mK, "
                       f"n_T = {rep.noise_floor:.6g} mK/sqrt(Hz)")
    return out


def sensitivity_summary(rows) -> list:
    prods = np.array([r[3] for r in rows])
    spread = prods.max() / prods.min() - 1
    lines = [f"tau_max={r[0]:g} us: sigma_f={r[1]:.6g} kHz, n_T={r[7]:.6g} mK/sqrt(Hz), r={r[5]:.6g} Hz"
             for r in rows]
    lines.append(f"sigma_f * tau_max spread across sweep = {100 * spread:.3g}% (1/tau scaling)")
    return lines


# --- heat profile ----------------------------------------------------------

@dataclass(frozen=True)
class HeatSourceModel:
    """Steady-state point source, ``dT(d) = source_power / d`` (K, d in um).

    Illustrative truth generator only; no heat-conduction physics.
    """
    source_power: float
    positions: tuple
    ambient: float
    model: str = "point_source_steady_state"
    min_standoff: float = 0.1

    def __post_init__(self):
        if self.model != "point_source_steady_state":
            raise ValueError(f"unknown heat model {self.model!r}")
        object.__setattr__(self, "positions", tuple(tuple(map(float, p)) for p in self.positions))

    def temperature_rise(self, distance):
        d = np.asarray(distance, dtype=float)
        if np.any(d < self.min_standoff):
            raise ValueError(f"distance below minimum standoff {self.min_standoff} um "
                             "(point-source singularity)")
        return self.source_power / d

    def distances(self) -> np.ndarray:
        return np.linalg.norm(np.asarray(self.positions), axis=1)


def heat_profile(cfg: dict, workers: int = 1) -> RunOutput:
    p = cfg["heat_profile"]
    model = HeatSourceModel(p["source_power"], tuple(map(tuple, p["positions"])), p["ambient"],
                            p["model"], p["min_standoff"])
    try:
        rise = model.temperature_rise(model.distances())
    except ValueError as exc:
        raise C.ConfigError([("heat_profile.positions", str(exc))]) from exc
    spec = C.spin_spec(cfg)
    cal = C.calibration(cfg)
    heat = C.heating(cfg)
    tau = _tau_grid(p["tau_max"], p["n_tau"])
    readout = C.readout_model(cfg, _readouts_for(p["measurement_time_s"], tau,
                                                 cfg["readout"]["sequence_overhead"]))
    mw_d = float(cal.d_at(model.ambient)) - p["fringe_offset_khz"] * 1e-3
    d_true = cal.d_at(model.ambient + rise + heat.total_k)
    seeds = task_seeds(cfg["master_seed"], 500, len(rise))
    tasks = [(spec, mw_d, float(d), tau, p["t_d"], p["stretch"], readout, s, p["noise"], None)
             for d, s in zip(d_true, seeds)]
    traces = parallel_map(_simulate_trace, tasks, workers)
    rows = []
    rate = 1.0 / p["measurement_time_s"]
    sigma_book = p["reference_noise_floor_mk"] * 1e-3 * math.sqrt(rate)
    for (x, y), dist, true_rise, tr in zip(model.positions, model.distances(), rise, traces):
        fit = fit_fringe(tr)
        d_hat = mw_d + fit.frequency * 1e-3
        t_hat = cal.t_ref + (d_hat - cal.d_ref) * 1e3 / cal.c_t - heat.total_k
        sig = fit.frequency_err / abs(cal.c_t)
        rows.append((x, y, dist, float(true_rise), t_hat - model.ambient, sig,
                     sig * 1e3 / math.sqrt(rate), sigma_book))
    out = RunOutput()
    out.tables["heat_profile.csv"] = (
        ["x_um", "y_um", "distance_um", "true_rise_k", "recovered_rise_k", "sigma_t_k",
         "noise_floor_mk_rthz", "sigma_t_bookkeeping_k"], rows)
    out.summary.append("heat source: synthetic steady-state point source dT = P/d (illustrative)")
    out.summary.extend(heat_summary(rows))
    out.summary.append(f"readouts per tau point: {readout.readouts_per_point}")
    return out


def heat_summary(rows) -> list:
    lines = []
    for r in rows:
        z = (r[4] - r[3]) / r[5] if r[5] > 0 else math.nan
        lines.append(f"d={r[2]:.4g} um: true dT={r[3]:.6g} K, recovered {r[4]:.6g} +/- {r[5]:.3g} K "
                     f"({z:+.2f} sigma), n_T={r[6]:.4g} mK/sqrt(Hz)")
    return lines


RUNNERS = {
    "decay_study": decay_study,
    "calibration_sweep": calibration_sweep,
    "drift_track": drift_track,
    "sensitivity_sweep": sensitivity_sweep,
    "heat_profile": heat_profile,
}
