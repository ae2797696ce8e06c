"""Simulation toolkit for NV-center crystal-field thermometry."""
from . import bath_sim, measurement_model, pulse_engine, spin_model

__all__ = ["spin_model", "pulse_engine", "bath_sim", "measurement_model"]
__version__ = "0.1.0"
