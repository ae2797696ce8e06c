"""
From photon counts to temperature
=================================

Add shot noise to a D-Ramsey trace, fit the fringe frequency, convert to
temperature and express the result as a noise floor.
"""
import numpy as np

from nvthermo import measurement_model as mm
from nvthermo.spin_model import SpinSystemSpec

cal = mm.CalibrationSpec(c_t=-78.6, d_ref=2870.685, t_ref=296.0)
readout = mm.ReadoutModel(readouts_per_point=10000)

# Microwaves are tuned 20 kHz below D so the fringe runs at 20 kHz plus any shift.
mw_d = cal.d_ref - 0.020
spec = SpinSystemSpec(d_zfs=mw_d, b_field=(0, 0, 50.0))
tau = np.linspace(0, 1000, 201)
true_temp = 296.05
delta = (cal.d_at(true_temp) - mw_d) * 1e3
signal = mm.d_ramsey_trace(spec, delta, tau, t_d=829.0)
trace = mm.SignalTrace(tau, signal, mm.sample_counts(signal, readout, rng_seed=4))
print(trace.to_csv().splitlines()[:4])

fit = mm.fit_fringe(trace)
d_hat = mw_d + fit.frequency * 1e-3
temp = cal.t_ref + (d_hat - cal.d_ref) * 1e3 / cal.c_t
print(f"fringe {fit.frequency:.3f} +/- {fit.frequency_err:.3f} kHz, decay {fit.decay:.0f} us")
print(f"temperature {temp:.4f} K (true {true_temp} K)")

measurement_time = readout.readouts_per_point * np.sum(tau + readout.sequence_overhead) * 1e-6
rep = mm.sensitivity_report(fit.frequency_err, measurement_time, cal)
print(f"sigma_T = {rep.sigma_t:.2f} mK at r = {rep.rate:.2e} Hz -> n_T = {rep.noise_floor:.1f} mK/sqrt(Hz)")

# Fixed-tau readout on the fringe slope, one estimate per second.
n = mm.readouts_in(1.0, 800.0, readout)
sigma = mm.slope_point_sigma(readout, 800.0, 829.0, readouts=n)
print(f"slope point: {n} readouts/s, sigma_f = {sigma:.3f} kHz, "
      f"sigma_T = {sigma / abs(cal.c_t) * 1e3:.1f} mK")
