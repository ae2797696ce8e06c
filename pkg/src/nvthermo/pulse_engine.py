"""Instantaneous microwave pulse sequences on the two NV electron transitions.

States are tracked in the frame rotating at the reference transition
frequencies ``f_-`` and ``f_+`` of the unperturbed system. Free evolution
uses the full Hamiltonian including any field offset and crystal-field
shift, so the only approximation is the delta-pulse limit.

Pulse phase conventions (all pulses are ``exp(-i theta/2 (cos(phi) X + sin(phi) Y))``
on the ``{|0>, |target>}`` pair):

* D-Ramsey: ``pi/2_-(pi/2)``, ``tau/2``, swap, ``tau/2``, ``pi/2_+(pi/2)``.
  The swap is ``pi_-(0) pi_+(pi) pi_-(0)``, which maps ``|0> + |->`` to
  ``-(|0> - |+>)`` and leaves ``|0>`` in place.
* Ramsey and Hahn echo use x pulses with a final ``pi/2`` about ``-x`` for
  Ramsey so that zero detuning sits at the fringe maximum.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .spin_model import (
    ELECTRON_MS,
    QuantumState,
    SpinSystemSpec,
    build_hamiltonian,
    propagator,
    transition_frequencies,
)

MIN_LINE_SEPARATION = 1.0  # MHz

_TRANSITION_MS = {"minus": -1, "plus": 1}


class SelectivityError(ValueError):
    """The two electron transitions are too close to address separately."""


@dataclass(frozen=True)
class PulseElement:
    kind: str
    transition: Optional[str] = None
    rotation_angle: float = 0.0
    pulse_phase: float = 0.0
    duration: float = 0.0
    b_offset: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "mw_pulse":
            if self.transition not in _TRANSITION_MS:
                raise ValueError(f"transition must be 'minus' or 'plus', got {self.transition!r}")
            if not 0 < self.rotation_angle <= 2 * np.pi + 1e-12:
                raise ValueError("rotation_angle must lie in (0, 2*pi]")
        elif self.kind == "free_evolution":
            if not (self.duration >= 0 and np.isfinite(self.duration)):
                raise ValueError("duration must be finite and non-negative")
            if self.b_offset is not None:
                object.__setattr__(self, "b_offset", tuple(float(x) for x in self.b_offset))
        else:
            raise ValueError(f"unknown element kind {self.kind!r}")


def pulse(transition: str, angle: float, phase: float = 0.0) -> PulseElement:
    return PulseElement("mw_pulse", transition=transition, rotation_angle=angle, pulse_phase=phase)


def wait(duration: float, b_offset=None) -> PulseElement:
    return PulseElement("free_evolution", duration=duration, b_offset=b_offset)


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple
    readout_basis: str = "population_0"
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if not self.elements:
            raise ValueError("a pulse sequence needs at least one element")
        if self.readout_basis != "population_0":
            raise ValueError("only population_0 readout is supported")

    @property
    def total_free_time(self) -> float:
        return sum(e.duration for e in self.elements if e.kind == "free_evolution")

    def to_records(self) -> list:
        out = []
        for e in self.elements:
            rec = {k: v for k, v in asdict(e).items() if v is not None}
            if e.kind == "mw_pulse":
                rec.pop("duration", None)
                rec.pop("b_offset", None)
            else:
                for k in ("transition", "rotation_angle", "pulse_phase"):
                    rec.pop(k, None)
            out.append(rec)
        return out

    def dumps(self) -> str:
        """One JSON record per line, preceded by a header record."""
        head = json.dumps({"sequence": self.name, "readout_basis": self.readout_basis})
        return "\n".join([head] + [json.dumps(r) for r in self.to_records()]) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PulseSequence":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = json.loads(lines[0])
        elements = []
        for ln in lines[1:]:
            rec = json.loads(ln)
            if rec.get("b_offset") is not None:
                rec["b_offset"] = tuple(rec["b_offset"])
            elements.append(PulseElement(**rec))
        return cls(tuple(elements), readout_basis=head.get("readout_basis", "population_0"),
                   name=head.get("sequence", "custom"))


def d_ramsey_sequence(tau: float, readout_phase: float = 0.0) -> PulseSequence:
    """D-Ramsey at total free time ``tau``.

    ``readout_phase`` rotates the final pi/2; ``pi/2`` puts zero shift on
    the steepest point of the fringe instead of its maximum.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    return PulseSequence((
        pulse("minus", np.pi / 2, np.pi / 2),
        wait(tau / 2),
        pulse("minus", np.pi, 0.0),
        pulse("plus", np.pi, np.pi),
        pulse("minus", np.pi, 0.0),
        wait(tau / 2),
        pulse("plus", np.pi / 2, np.pi / 2 + readout_phase),
    ), name="d_ramsey")


def hahn_echo_sequence(tau: float, transition: str = "minus") -> PulseSequence:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return PulseSequence((
        pulse(transition, np.pi / 2),
        wait(tau / 2),
        pulse(transition, np.pi),
        wait(tau / 2),
        pulse(transition, np.pi / 2),
    ), name="hahn_echo")


def ramsey_sequence(tau: float, transition: str = "minus",
                    readout_phase: float = 0.0) -> PulseSequence:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return PulseSequence((
        pulse(transition, np.pi / 2),
        wait(tau),
        pulse(transition, np.pi / 2, np.pi + readout_phase),
    ), name="ramsey")


SEQUENCE_FACTORIES = {
    "d_ramsey": d_ramsey_sequence,
    "hahn_echo": hahn_echo_sequence,
    "ramsey": ramsey_sequence,
}


def _electron_index(ms: int) -> int:
    return ELECTRON_MS.index(ms)


@lru_cache(maxsize=256)
def _check_selective(spec: SpinSystemSpec):
    f_minus, f_plus = transition_frequencies(spec)
    if abs(f_plus - f_minus) < MIN_LINE_SEPARATION:
        raise SelectivityError(
            f"transitions separated by {abs(f_plus - f_minus):.3g} MHz; "
            f"need >= {MIN_LINE_SEPARATION} MHz (increase B_z)")
    return f_minus, f_plus


def mw_pulse_unitary(spec: SpinSystemSpec, transition: str, rotation_angle: float,
                     pulse_phase: float = 0.0) -> np.ndarray:
    """Ideal rotation on ``{|0>, |target>}``, identity on the remaining level and nuclei."""
    _check_selective(spec)
    if transition not in _TRANSITION_MS:
        raise ValueError(f"transition must be 'minus' or 'plus', got {transition!r}")
    i0 = _electron_index(0)
    it = _electron_index(_TRANSITION_MS[transition])
    c = np.cos(rotation_angle / 2)
    s = np.sin(rotation_angle / 2)
    u = np.eye(3, dtype=complex)
    u[i0, i0] = c
    u[it, it] = c
    u[i0, it] = -1j * np.exp(-1j * pulse_phase) * s
    u[it, i0] = -1j * np.exp(1j * pulse_phase) * s
    nuc = spec.dim // 3
    return np.kron(u, np.eye(nuc)) if nuc > 1 else u


@dataclass
class EvolutionContext:
    spec: SpinSystemSpec
    static_b_offset: tuple = (0.0, 0.0, 0.0)
    delta_d: float = 0.0
    extra_phase_accumulators: tuple = field(default=(0.0, 0.0), init=False)

    def __post_init__(self):
        self.static_b_offset = tuple(float(x) for x in self.static_b_offset)
        if len(self.static_b_offset) != 3:
            raise ValueError("static_b_offset must be a 3-vector (mT)")

    @property
    def phi_d(self) -> float:
        return self.extra_phase_accumulators[0]

    @property
    def phi_b(self) -> float:
        return self.extra_phase_accumulators[1]


def _frame_energies(spec: SpinSystemSpec, f_minus: float, f_plus: float) -> np.ndarray:
    ref = {1: f_plus, 0: 0.0, -1: f_minus}
    diag = np.array([ref[ms] for ms in ELECTRON_MS])
    return np.repeat(diag, spec.dim // 3)


def _free_propagator(h: np.ndarray, frame: np.ndarray, t0: float, duration: float) -> np.ndarray:
    """Rotating-frame propagator for ``[t0, t0 + duration]``."""
    hr = h - np.diag(frame)
    if np.allclose(hr @ np.diag(frame), np.diag(frame) @ hr, atol=1e-9, rtol=0):
        return propagator(hr, duration)
    u_lab = propagator(h, duration)
    left = np.exp(2j * np.pi * frame * (t0 + duration))
    right = np.exp(-2j * np.pi * frame * t0)
    return (left[:, None] * u_lab) * right[None, :]


def _branch_phases(seq: PulseSequence, delta_d: float, gamma_db: float):
    """First-order D and B phases (rad) acquired by the active coherence.

    The coherence is tracked as an ordered pair of electron levels; pi pulses
    relabel 0 <-> target. ``delta_d`` and ``gamma_db`` are in kHz.
    """
    pair = None
    phi_d = phi_b = 0.0
    det_d = {0: 0.0, 1: delta_d, -1: delta_d}
    det_b = {0: 0.0, 1: gamma_db, -1: -gamma_db}
    for e in seq.elements:
        if e.kind == "mw_pulse":
            ms = _TRANSITION_MS[e.transition]
            if pair is None:
                if np.isclose(e.rotation_angle, np.pi / 2):
                    pair = (0, ms)
            elif np.isclose(e.rotation_angle, np.pi):
                pair = tuple(ms if p == 0 else 0 if p == ms else p for p in pair)
        elif pair is not None:
            a, b = pair
            # kHz * us = 1e-3 cycles
            phi_d -= 2 * np.pi * e.duration * 1e-3 * (det_d[b] - det_d[a])
            phi_b -= 2 * np.pi * e.duration * 1e-3 * (det_b[b] - det_b[a])
    return phi_d, phi_b


def run_sequence(ctx: EvolutionContext, seq: PulseSequence, return_state: bool = False):
    """Population of ``m_S = 0`` after ``seq`` starting from ``|0>``.

    With a nitrogen nucleus the nucleus starts fully mixed and the returned
    population is averaged over its initial states.
    """
    spec = ctx.spec
    f_minus, f_plus = _check_selective(spec)
    frame = _frame_energies(spec, f_minus, f_plus)
    nuc = spec.dim // 3
    i0 = _electron_index(0)

    units = {}
    hams = {}
    t = 0.0
    u_total = np.eye(spec.dim, dtype=complex)
    for e in seq.elements:
        if e.kind == "mw_pulse":
            key = (e.transition, e.rotation_angle, e.pulse_phase)
            if key not in units:
                units[key] = mw_pulse_unitary(spec, *key)
            u_total = units[key] @ u_total
        else:
            if e.duration == 0:
                continue
            offset = np.add(ctx.static_b_offset, e.b_offset or (0.0, 0.0, 0.0))
            hkey = tuple(offset)
            if hkey not in hams:
                hams[hkey] = build_hamiltonian(spec.with_offsets(offset, ctx.delta_d))
            u_total = _free_propagator(hams[hkey], frame, t, e.duration) @ u_total
            t += e.duration

    gamma_db = spec.gamma_e * ctx.static_b_offset[2] * 1e3
    ctx.extra_phase_accumulators = _branch_phases(seq, ctx.delta_d, gamma_db)

    cols = u_total[:, i0 * nuc:(i0 + 1) * nuc]
    pops = np.sum(np.abs(cols[i0 * nuc:(i0 + 1) * nuc, :]) ** 2, axis=0)
    signal = float(np.clip(np.mean(pops), 0.0, 1.0))
    if return_state:
        if nuc != 1:
            raise ValueError("return_state needs a pure initial state (no nitrogen)")
        psi = QuantumState(cols[:, 0], spec.basis_labels())
        return signal, psi
    return signal


def signal_curve(ctx: EvolutionContext, factory, tau_grid: Sequence[float], **kwargs) -> np.ndarray:
    """Evaluate ``run_sequence`` for ``factory(tau)`` across ``tau_grid``."""
    out = np.empty(len(tau_grid))
    for k, tau in enumerate(tau_grid):
        if tau == 0 and factory is d_ramsey_sequence:
            seq = d_ramsey_limit_sequence(**kwargs)
        else:
            seq = factory(tau, **kwargs)
        out[k] = run_sequence(ctx, seq)
    return out


def d_ramsey_limit_sequence(readout_phase: float = 0.0) -> PulseSequence:
    """D-Ramsey with zero free evolution (the tau -> 0 limit)."""
    els = tuple(e for e in d_ramsey_sequence(1.0, readout_phase).elements if e.kind == "mw_pulse")
    return PulseSequence(els, name="d_ramsey")
