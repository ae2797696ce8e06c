"""
Why the D-Ramsey sequence
=========================

Plain Ramsey fringes move with the magnetic field, a Hahn echo cancels both
the field and the crystal-field shift, and the D-Ramsey sequence keeps only
the crystal-field shift.
"""
import numpy as np

from nvthermo.pulse_engine import (EvolutionContext, d_ramsey_sequence, hahn_echo_sequence,
                                   ramsey_sequence, run_sequence, signal_curve)
from nvthermo.spin_model import SpinSystemSpec

spec = SpinSystemSpec(b_field=(0, 0, 50.0))
tau = np.linspace(0, 40, 9)

print(d_ramsey_sequence(10.0).dumps())

for label, ctx in [("dD=25 kHz", EvolutionContext(spec, delta_d=25.0)),
                   ("dD=25 kHz, dB=0.1 mT", EvolutionContext(spec, (0, 0, 0.1), delta_d=25.0))]:
    print(label)
    print("  D-Ramsey:", np.round(signal_curve(ctx, d_ramsey_sequence, tau), 4))
    print("  echo:    ", np.round(signal_curve(ctx, hahn_echo_sequence, tau), 4))

# The expected D-Ramsey fringe is (1 + cos(2 pi dD tau)) / 2.
print("cosine:    ", np.round(0.5 * (1 + np.cos(2 * np.pi * 25e-3 * tau)), 4))

# Phase bookkeeping: the field phase cancels, the crystal-field phase adds up.
ctx = EvolutionContext(spec, (0, 0, 0.1), delta_d=25.0)
run_sequence(ctx, d_ramsey_sequence(20.0))
print(f"D-Ramsey phi_D = {ctx.phi_d:.4f} rad, phi_B = {ctx.phi_b:.4f} rad")
run_sequence(ctx, ramsey_sequence(20.0))
print(f"Ramsey   phi_D = {ctx.phi_d:.4f} rad, phi_B = {ctx.phi_b:.4f} rad")
