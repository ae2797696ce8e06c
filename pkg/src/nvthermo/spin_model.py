"""NV ground-state spin Hamiltonian, level assignment and exact propagation.

Units are fixed throughout the package: frequencies in MHz, fields in mT,
times in microseconds. ``delta_d`` offsets are given in kHz. The 2*pi factor
only enters inside :func:`propagator`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Optional, Sequence

import numpy as np

GAMMA_E = 28.024  # MHz/mT
GAMMA_C13 = 0.010705  # MHz/mT

# electron basis order used everywhere: m_S = +1, 0, -1
ELECTRON_MS = (1, 0, -1)


class DegeneracyError(ValueError):
    """Raised when eigenvectors cannot be paired unambiguously with basis states."""


@dataclass(frozen=True)
class SpinOperatorSet:
    multiplicity: int
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    @property
    def spin(self) -> float:
        return (self.multiplicity - 1) / 2

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.multiplicity, dtype=complex)


def build_spin_operators(multiplicity: int) -> SpinOperatorSet:
    """Angular momentum matrices for spin ``(multiplicity - 1) / 2``.

    The basis is ordered by descending m, so ``sz = diag(S, S-1, ..., -S)``.
    """
    if int(multiplicity) != multiplicity or multiplicity < 2:
        raise ValueError(f"multiplicity must be an integer >= 2, got {multiplicity!r}")
    n = int(multiplicity)
    s = (n - 1) / 2
    m = s - np.arange(n)
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1)), raising moves one index up
    sp = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    sz = np.diag(m).astype(complex)
    return SpinOperatorSet(n, sx, sy, sz)


NITROGEN_DEFAULTS = {
    # isotope: (multiplicity, a_par MHz, a_perp MHz, gamma_n MHz/mT, quadrupole MHz)
    "N14": (3, -2.16, -2.7, 0.003077, -4.96),
    "N15": (2, 3.03, 3.65, -0.004316, 0.0),
}


@dataclass(frozen=True)
class NitrogenSpec:
    isotope: str = "N14"
    a_par: Optional[float] = None
    a_perp: Optional[float] = None
    gamma_n: Optional[float] = None
    quadrupole: Optional[float] = None

    def __post_init__(self):
        if self.isotope not in NITROGEN_DEFAULTS:
            raise ValueError(f"unknown nitrogen isotope {self.isotope!r}")
        _, a_par, a_perp, gamma_n, quad = NITROGEN_DEFAULTS[self.isotope]
        for name, default in (("a_par", a_par), ("a_perp", a_perp),
                              ("gamma_n", gamma_n), ("quadrupole", quad)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, default)
        if self.isotope == "N15" and self.quadrupole:
            raise ValueError("I=1/2 nucleus has no quadrupole term")

    @property
    def multiplicity(self) -> int:
        return NITROGEN_DEFAULTS[self.isotope][0]


@dataclass(frozen=True)
class SpinSystemSpec:
    d_zfs: float = 2870.0
    gamma_e: float = GAMMA_E
    b_field: tuple = (0.0, 0.0, 0.0)
    nitrogen: Optional[NitrogenSpec] = None
    delta_d: float = 0.0

    def __post_init__(self):
        b = tuple(float(x) for x in self.b_field)
        if len(b) != 3:
            raise ValueError("b_field must be a 3-vector (mT)")
        object.__setattr__(self, "b_field", b)
        if not self.d_zfs > 0:
            raise ValueError("d_zfs must be positive")
        if not self.gamma_e > 0:
            raise ValueError("gamma_e must be positive")

    @property
    def dims(self) -> tuple:
        return (3,) if self.nitrogen is None else (3, self.nitrogen.multiplicity)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def with_offsets(self, b_offset: Sequence[float] = (0, 0, 0),
                     delta_d: float = 0.0) -> "SpinSystemSpec":
        b = tuple(np.add(self.b_field, b_offset))
        return replace(self, b_field=b, delta_d=self.delta_d + delta_d)

    def basis_labels(self) -> list:
        if self.nitrogen is None:
            return [(ms,) for ms in ELECTRON_MS]
        ops = build_spin_operators(self.nitrogen.multiplicity)
        mi = np.real(np.diag(ops.sz))
        return [(ms, float(m)) for ms in ELECTRON_MS for m in mi]


@dataclass
class QuantumState:
    amplitudes: np.ndarray
    basis_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1) > 1e-10:
            raise ValueError(f"state is not normalized (norm={norm})")
        if self.basis_labels and len(self.basis_labels) != self.amplitudes.size:
            raise ValueError("basis_labels length does not match amplitudes")

    @classmethod
    def basis(cls, spec: SpinSystemSpec, label) -> "QuantumState":
        labels = spec.basis_labels()
        amps = np.zeros(len(labels), dtype=complex)
        amps[labels.index(tuple(label))] = 1
        return cls(amps, labels)

    def population(self, index: int) -> float:
        return float(abs(self.amplitudes[index]) ** 2)


def electron_operators() -> SpinOperatorSet:
    return build_spin_operators(3)


def build_hamiltonian(spec: SpinSystemSpec) -> np.ndarray:
    """Ground-state Hamiltonian in MHz on electron (x) nitrogen space."""
    s = electron_operators()
    bx, by, bz = spec.b_field
    d = spec.d_zfs + spec.delta_d * 1e-3
    he = d * s.sz @ s.sz + spec.gamma_e * (bx * s.sx + by * s.sy + bz * s.sz)
    if spec.nitrogen is None:
        return he
    n = spec.nitrogen
    i = build_spin_operators(n.multiplicity)
    ie = np.eye(3)
    h = np.kron(he, i.identity)
    h += n.a_par * np.kron(s.sz, i.sz)
    h += n.a_perp * (np.kron(s.sx, i.sx) + np.kron(s.sy, i.sy))
    h += n.quadrupole * np.kron(ie, i.sz @ i.sz)
    h -= n.gamma_n * np.kron(ie, bx * i.sx + by * i.sy + bz * i.sz)
    return (h + h.conj().T) / 2


def eigensystem(spec: SpinSystemSpec):
    """Eigenvalues/eigenvectors of ``H`` with degenerate blocks rotated onto Sz.

    Within any degenerate cluster the eigenvectors are rediagonalized against
    the diagonal operator ``diag(0, 1, 2, ...)`` so that exactly degenerate
    levels map onto basis states instead of arbitrary mixtures.
    """
    h = build_hamiltonian(spec)
    w, v = np.linalg.eigh(h)
    tol = 1e-9 * max(1.0, np.max(np.abs(w)))
    marker = np.diag(np.arange(h.shape[0], dtype=float))
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and w[stop] - w[start] < tol:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            _, rot = np.linalg.eigh(block.conj().T @ marker @ block)
            v[:, start:stop] = block @ rot
        start = stop
    return w, v


def level_energies(spec: SpinSystemSpec, min_overlap: float = 0.6) -> dict:
    """Map each basis label to the eigenvalue of the eigenvector that overlaps it most.

    Ties resolve to the lowest eigenvector index.
    """
    w, v = eigensystem(spec)
    overlap = np.abs(v) ** 2  # rows: basis states, columns: eigenvectors
    labels = spec.basis_labels()
    out = {}
    taken = set()
    for row, label in enumerate(labels):
        col = int(np.argmax(overlap[row]))
        if overlap[row, col] < min_overlap or col in taken:
            raise DegeneracyError(
                f"cannot assign an eigenvector to basis state {label} "
                f"(best overlap {overlap[row, col]:.3f})")
        taken.add(col)
        out[label] = float(w[col])
    return out


def transition_frequencies(spec: SpinSystemSpec, m_i: Optional[float] = None):
    """Frequencies (MHz) of the |0> <-> |-1> and |0> <-> |+1> transitions.

    With a nitrogen nucleus present, ``m_i`` selects the hyperfine line. If it
    is None the nucleus is dropped and the hyperfine-centroid lines are returned.
    """
    if spec.nitrogen is not None and m_i is None:
        spec = replace(spec, nitrogen=None)
    levels = level_energies(spec)
    key = (lambda ms: (ms,)) if spec.nitrogen is None else (lambda ms: (ms, float(m_i)))
    try:
        e0, em, ep = levels[key(0)], levels[key(-1)], levels[key(1)]
    except KeyError:
        raise ValueError(f"m_i={m_i} is not a valid nuclear projection") from None
    return em - e0, ep - e0


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-2*pi*i*H*t)`` for Hermitian ``H`` in MHz and ``t`` in us."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-2j * np.pi * w * t)) @ v.conj().T


def evolve(state: QuantumState, h: np.ndarray, t: float) -> QuantumState:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape != (state.amplitudes.size,) * 2:
        raise ValueError(
            f"Hamiltonian shape {h.shape} does not match state dimension {state.amplitudes.size}")
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if t == 0:
        return QuantumState(state.amplitudes.copy(), list(state.basis_labels))
    psi = propagator(h, t) @ state.amplitudes
    return QuantumState(psi, list(state.basis_labels))


def kron_all(mats) -> np.ndarray:
    return reduce(np.kron, mats)
