"""Photon shot noise, fringe fitting, temperature conversion and sensitivity figures.

Frequencies of fringes and crystal-field shifts are in kHz, free-evolution
times in us, temperatures in K (per-point uncertainties and noise floors in
mK and mK/sqrt(Hz)).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .pulse_engine import EvolutionContext, d_ramsey_sequence, signal_curve
from .spin_model import SpinSystemSpec


class NoSignalError(ValueError):
    pass


class FitFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ReadoutModel:
    counts_bright: float = 0.03
    counts_dark: float = 0.021
    readouts_per_point: int = 100_000
    sequence_overhead: float = 1.3  # us: 1 us init + 300 ns readout

    def __post_init__(self):
        if not self.counts_bright > self.counts_dark >= 0:
            raise ValueError("need counts_bright > counts_dark >= 0")
        if self.readouts_per_point < 1:
            raise ValueError("readouts_per_point must be >= 1")

    @property
    def contrast(self) -> float:
        return 1 - self.counts_dark / self.counts_bright

    def mean_counts(self, signal):
        s = np.asarray(signal, dtype=float)
        return self.readouts_per_point * (self.counts_dark + s * (self.counts_bright - self.counts_dark))

    def to_signal(self, counts, readouts=None):
        n = self.readouts_per_point if readouts is None else readouts
        return (np.asarray(counts) / n - self.counts_dark) / (self.counts_bright - self.counts_dark)


@dataclass(frozen=True)
class HeatingOffsets:
    """Constant sample heating by the measurement itself (mK)."""
    laser_mk: float = 3.0
    microwave_mk: float = 0.0

    @property
    def total_k(self) -> float:
        return (self.laser_mk + self.microwave_mk) * 1e-3


@dataclass(frozen=True)
class CalibrationSpec:
    c_t: float = -74.2  # kHz/K
    d_ref: float = 2870.685  # MHz
    t_ref: float = 300.0  # K

    def __post_init__(self):
        if self.c_t == 0:
            raise CalibrationError("c_t must be non-zero")

    def d_at(self, temperature):
        """Crystal-field parameter (MHz) at ``temperature`` (linear response)."""
        return self.d_ref + self.c_t * 1e-3 * (np.asarray(temperature) - self.t_ref)


@dataclass
class SignalTrace:
    tau_grid: np.ndarray
    mean_signal: np.ndarray
    counts: Optional[np.ndarray] = None
    model_truth: Optional[dict] = None
    timestamp: Optional[float] = None
    readouts_per_point: Optional[int] = None

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.mean_signal = np.asarray(self.mean_signal, dtype=float)
        if self.tau_grid.shape != self.mean_signal.shape:
            raise ValueError("tau_grid and mean_signal lengths differ")
        if self.counts is not None:
            self.counts = np.asarray(self.counts)
            if self.counts.shape != self.tau_grid.shape:
                raise ValueError("counts length differs from tau_grid")
            if np.any(self.counts < 0):
                raise ValueError("counts must be non-negative")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("tau_us,mean_signal,counts\n")
        counts = self.counts if self.counts is not None else [None] * len(self.tau_grid)
        for t, s, c in zip(self.tau_grid, self.mean_signal, counts):
            buf.write(f"{float(t)!r},{float(s)!r},{'' if c is None else int(c)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **kwargs) -> "SignalTrace":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        header = [h.strip() for h in lines[0].split(",")]
        if header[:2] != ["tau_us", "mean_signal"]:
            raise ValueError("trace file needs a 'tau_us,mean_signal[,counts]' header")
        tau, sig, cnt = [], [], []
        for ln in lines[1:]:
            parts = ln.split(",")
            tau.append(float(parts[0]))
            sig.append(float(parts[1]))
            cnt.append(int(parts[2]) if len(parts) > 2 and parts[2].strip() else None)
        counts = None if any(c is None for c in cnt) else np.array(cnt)
        return cls(np.array(tau), np.array(sig), counts, **kwargs)


@dataclass
class FringeFit:
    frequency: float
    frequency_err: float
    decay: float
    decay_err: float
    phase: float
    offset: float
    amplitude: float
    stretch: float
    covariance: np.ndarray = field(repr=False)
    reduced_chi2: float = np.nan


@dataclass(frozen=True)
class SensitivityReport:
    delta_d_hat: float
    delta_d_err: float
    temperature_hat: float
    temperature_err: float
    noise_floor: float  # mK/sqrt(Hz)
    rate: float  # Hz
    sigma_t: float  # mK

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sample_counts(mean_signal, model: ReadoutModel, rng_seed=None):
    """Poisson photon counts for one or many signal values."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.poisson(model.mean_counts(mean_signal))


def fringe_model(params, tau):
    a, b, f, rate, p, phi = params
    return a + b * np.exp(-(rate * tau) ** p) * np.cos(2 * np.pi * f * 1e-3 * tau + phi)


def periodogram(tau, y, freqs):
    """``|sum (y - mean) exp(-2 pi i f tau)|^2 / N`` with ``f`` in kHz; works on uneven grids."""
    yc = y - np.mean(y)
    ph = np.exp(-2j * np.pi * np.outer(freqs * 1e-3, tau))
    return np.abs(ph @ yc) ** 2 / len(y)


def fit_fringe(trace: SignalTrace, p_bounds=(0.5, 3.0), snr_threshold: float = 15.0,
               max_frequency: Optional[float] = None, max_nfev: int = 2000) -> FringeFit:
    """Least-squares fit of ``a + b exp(-(tau/T)^p) cos(2 pi f tau + phi)``.

    Uses counts with Poisson weights when present, otherwise the mean signal
    with residual-scaled covariance. ``decay`` is ``T`` in us (``inf`` when
    the fitted decay rate is zero).
    """
    tau = trace.tau_grid
    if len(tau) < 8:
        raise ValueError("need at least 8 points for a fringe fit")
    if trace.counts is not None:
        y = trace.counts.astype(float)
        sigma = np.sqrt(np.maximum(y, 1.0))
        noise_var = float(np.mean(y))
        absolute = True
    else:
        y = trace.mean_signal
        sigma = np.ones_like(y)
        noise_var = 0.0
        absolute = False

    span = tau.max() - tau.min()
    dt = np.min(np.diff(np.sort(tau)))
    f_hi = max_frequency if max_frequency is not None else 0.5e3 / dt
    freqs = np.linspace(0.25e3 / span, f_hi, max(512, int(20 * f_hi * span * 1e-3)))
    power = periodogram(tau, y, freqs)
    k = int(np.argmax(power))
    floor = noise_var if noise_var > 0 else 1e-24 * max(1.0, float(np.mean(y ** 2)))
    if power[k] <= snr_threshold * floor:
        raise NoSignalError(f"no spectral peak above noise floor (peak/floor={power[k] / floor:.3g})")
    if 0 < k < len(freqs) - 1:
        # parabolic refinement of the peak
        y0, y1, y2 = power[k - 1:k + 2]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        f0 = freqs[k] + np.clip(shift, -1, 1) * (freqs[1] - freqs[0])
    else:
        f0 = freqs[k]

    w = 2 * np.pi * f0 * 1e-3 * tau
    design = np.column_stack([np.ones_like(tau), np.cos(w), np.sin(w)])
    (a0, c0, s0), *_ = np.linalg.lstsq(design / sigma[:, None], y / sigma, rcond=None)
    b0 = max(np.hypot(c0, s0), 1e-12)
    phi0 = math.atan2(-s0, c0)

    lower = [-np.inf, 0.0, 0.0, 0.0, p_bounds[0], -np.inf]
    upper = [np.inf, np.inf, f_hi * 1.5, np.inf, p_bounds[1], np.inf]

    def resid(x):
        return (fringe_model(x, tau) - y) / sigma

    best = None
    for rate0 in (0.0, 0.3 / span, 1.0 / span, 3.0 / span):
        x0 = [a0, b0, f0, rate0, float(np.clip(1.0, *p_bounds)), phi0]
        try:
            res = least_squares(resid, x0, bounds=(lower, upper), x_scale="jac",
                                max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12)
        except ValueError as exc:
            raise FitFailure(str(exc)) from exc
        if res.status > 0 and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitFailure("least squares did not converge", {"f0": f0, "nfev": max_nfev})

    dof = max(len(tau) - len(best.x), 1)
    chi2 = 2 * best.cost / dof
    jtj = best.jac.T @ best.jac
    cov = np.linalg.pinv(jtj)
    if not absolute:
        cov = cov * chi2
    err = np.sqrt(np.clip(np.diag(cov), 0, np.inf))
    a, b, f, rate, p, phi = best.x
    if rate > 0:
        decay = 1.0 / rate
        decay_err = err[3] / rate ** 2
    else:
        decay, decay_err = np.inf, np.nan
    phi = (phi + np.pi) % (2 * np.pi) - np.pi
    return FringeFit(f, err[2], decay, decay_err, phi, a, b, p, cov, chi2)


def delta_d_to_temperature(delta_d: float, cal: CalibrationSpec, absolute: bool = False) -> float:
    """Temperature change (K) for a crystal-field shift (kHz); ``t_ref`` added if ``absolute``."""
    if cal.c_t == 0:
        raise CalibrationError("c_t must be non-zero")
    dt = delta_d / cal.c_t
    return cal.t_ref + dt if absolute else dt


def sensitivity_report(f_uncertainty: float, measurement_time: float, cal: CalibrationSpec,
                       delta_d: float = np.nan) -> SensitivityReport:
    if not measurement_time > 0:
        raise ValueError("measurement_time must be positive")
    sigma_k = f_uncertainty / abs(cal.c_t)
    sigma_mk = sigma_k * 1e3
    rate = 1.0 / measurement_time
    noise_floor = sigma_mk / math.sqrt(rate)
    t_hat = delta_d_to_temperature(delta_d, cal, absolute=True) if np.isfinite(delta_d) else np.nan
    return SensitivityReport(delta_d, f_uncertainty, t_hat, sigma_k, noise_floor, rate, sigma_mk)


def sigma_from_noise_floor(noise_floor: float, rate: float) -> float:
    """Per-point uncertainty (mK) ``n_T * sqrt(r)``."""
    return noise_floor * math.sqrt(rate)


# --- fixed-tau slope readout -----------------------------------------------

def slope_point_sigma(model: ReadoutModel, tau: float, t_d: float, stretch: float = 1.0,
                      readouts: Optional[int] = None) -> float:
    """Shot-noise uncertainty (kHz) of a crystal-field shift read at the fringe quadrature.

    At the quadrature point the signal is ``1/2 + E/2 sin(2 pi dD tau)`` with
    envelope ``E = exp(-(tau/T_D)^p)``; linearized in ``dD``.
    """
    n = model.readouts_per_point if readouts is None else readouts
    env = math.exp(-(tau / t_d) ** stretch) if np.isfinite(t_d) else 1.0
    mean = n * (model.counts_dark + 0.5 * (model.counts_bright - model.counts_dark))
    slope = n * (model.counts_bright - model.counts_dark) * 0.5 * env * 2 * np.pi * tau * 1e-3
    return math.sqrt(mean) / slope


def slope_point_estimate(counts, model: ReadoutModel, tau: float, t_d: float,
                         stretch: float = 1.0, readouts: Optional[int] = None):
    """Linearized shift estimate (kHz) and its shot-noise uncertainty from one count total."""
    n = model.readouts_per_point if readouts is None else readouts
    env = math.exp(-(tau / t_d) ** stretch) if np.isfinite(t_d) else 1.0
    s = model.to_signal(counts, n)
    delta = (s - 0.5) / (0.5 * env * 2 * np.pi * tau * 1e-3)
    return delta, slope_point_sigma(model, tau, t_d, stretch, n)


def readouts_in(measurement_time: float, tau: float, model: ReadoutModel) -> int:
    """Number of sequence repetitions that fit into ``measurement_time`` seconds."""
    return int(measurement_time * 1e6 // (tau + model.sequence_overhead))


# --- synthetic traces --------------------------------------------------------

def d_ramsey_trace(spec: SpinSystemSpec, delta_d: float, tau_grid: Sequence[float],
                   t_d: float = np.inf, stretch: float = 1.0, b_offset=(0.0, 0.0, 0.0),
                   readout_phase: float = 0.0) -> np.ndarray:
    """Mean D-Ramsey signal from the unitary engine, damped by a stretched envelope."""
    ctx = EvolutionContext(spec, static_b_offset=b_offset, delta_d=delta_d)
    ideal = signal_curve(ctx, d_ramsey_sequence, tau_grid, readout_phase=readout_phase)
    tau = np.asarray(tau_grid, dtype=float)
    env = np.exp(-(tau / t_d) ** stretch) if np.isfinite(t_d) else np.ones_like(tau)
    return 0.5 + (ideal - 0.5) * env


# --- drift tracking ----------------------------------------------------------

@dataclass
class DriftTrack:
    timestamps: np.ndarray
    d_mhz: np.ndarray
    d_err_khz: np.ndarray
    temperature: np.ndarray
    temperature_err: np.ndarray
    ok: np.ndarray
    errors: list
    reference: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None

    @property
    def residual_std(self) -> float:
        if self.residuals is None:
            return np.nan
        r = self.residuals[self.ok]
        return float(np.std(r, ddof=1)) if r.size > 1 else np.nan

    @property
    def rms_point_sigma(self) -> float:
        return float(np.sqrt(np.mean(self.temperature_err[self.ok] ** 2)))

    def residual_delta_d(self, cal: CalibrationSpec) -> Optional[np.ndarray]:
        """Residuals expressed as crystal-field differences (kHz)."""
        return None if self.residuals is None else self.residuals * cal.c_t


def track_drift(traces: Sequence[SignalTrace], cal: CalibrationSpec, mw_d: float,
                reference: Optional[np.ndarray] = None,
                heating: Optional[HeatingOffsets] = None, **fit_kwargs) -> DriftTrack:
    """Per-interval D and temperature from D-Ramsey fringe frequencies.

    ``mw_d`` (MHz) is the crystal-field value the microwave frequencies are
    tuned to; it must sit below every D reached so the fringe frequency
    ``D - mw_d`` stays positive. ``reference`` is a two-column
    ``(timestamp, temperature)`` series, interpolated linearly onto the trace
    timestamps. Fit failures are recorded per interval and excluded.
    """
    n = len(traces)
    ts = np.array([np.nan if t.timestamp is None else t.timestamp for t in traces], dtype=float)
    if np.any(np.isnan(ts)):
        raise ValueError("every trace needs a timestamp")
    d = np.full(n, np.nan)
    d_err = np.full(n, np.nan)
    ok = np.zeros(n, dtype=bool)
    errors = [None] * n
    for k, tr in enumerate(traces):
        try:
            fit = fit_fringe(tr, **fit_kwargs)
        except (NoSignalError, FitFailure, ValueError) as exc:
            errors[k] = f"{type(exc).__name__}: {exc}"
            continue
        d[k] = mw_d + fit.frequency * 1e-3
        d_err[k] = fit.frequency_err
        ok[k] = True
    offset = heating.total_k if heating is not None else 0.0
    temp = cal.t_ref + (d - cal.d_ref) * 1e3 / cal.c_t - offset
    temp_err = d_err / abs(cal.c_t)
    residuals = None
    ref = None
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        if ref.ndim != 2 or ref.shape[1] != 2:
            raise ValueError("reference must be a two-column (timestamp, temperature) series")
        order = np.argsort(ref[:, 0])
        ref_t = np.interp(ts, ref[order, 0], ref[order, 1])
        residuals = temp - ref_t
    return DriftTrack(ts, d, d_err, temp, temp_err, ok, errors, ref, residuals)
