"""
Ground-state levels and transition lines
========================================

Build the spin-1 Hamiltonian, look at the two microwave lines and how they
respond to an axial field, a transverse field and a crystal-field shift.
"""
import numpy as np

from nvthermo.spin_model import (NitrogenSpec, SpinSystemSpec, build_hamiltonian,
                                 transition_frequencies)

# Zero field: the |+1> and |-1> levels sit together at D.
spec = SpinSystemSpec(d_zfs=2870.0)
print("B = 0 eigenvalues (MHz):", np.linalg.eigvalsh(build_hamiltonian(spec)))

# An axial field splits the lines by 2 gamma_e B_z.
spec = SpinSystemSpec(d_zfs=2870.0, b_field=(0, 0, 5.0))
f_minus, f_plus = transition_frequencies(spec)
print(f"B_z = 5 mT: f- = {f_minus:.3f} MHz, f+ = {f_plus:.3f} MHz")

# A transverse field pushes |0> down and the symmetric upper combination up.
w = np.linalg.eigvalsh(build_hamiltonian(SpinSystemSpec(d_zfs=2870.0, b_field=(1.0, 0, 0))))
print("B_x = 1 mT level shifts (kHz):", np.round((w - [0, 2870, 2870]) * 1e3, 2))

# Warming by 1 K lowers D by about 74 kHz and moves both lines together.
warm = SpinSystemSpec(d_zfs=2870.0, b_field=(0, 0, 5.0), delta_d=-74.2)
shift = (np.array(transition_frequencies(warm)) - [f_minus, f_plus]) * 1e3
print("line shifts for dD = -74.2 kHz (kHz):", np.round(shift, 6))

# With a 15N nucleus each line splits into two hyperfine components.
n15 = SpinSystemSpec(b_field=(0, 0, 50.0), nitrogen=NitrogenSpec("N15"))
for m in (0.5, -0.5):
    print(f"15N m_I = {m:+}: f- = {transition_frequencies(n15, m_i=m)[0]:.4f} MHz")
