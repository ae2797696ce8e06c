import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvthermo.pulse_engine import (
    EvolutionContext, PulseElement, PulseSequence, SelectivityError, d_ramsey_limit_sequence,
    d_ramsey_sequence, hahn_echo_sequence, mw_pulse_unitary, pulse, ramsey_sequence,
    run_sequence, signal_curve, wait,
)
from nvthermo.spin_model import NitrogenSpec, SpinSystemSpec

SPEC = SpinSystemSpec(b_field=(0.0, 0.0, 50.0))
GAMMA = 28.024


def fringe(freq_khz, tau):
    return 0.5 * (1 + np.cos(2 * np.pi * freq_khz * 1e-3 * np.asarray(tau)))


# --- pulses --------------------------------------------------------------------

def test_full_rotation_is_identity_up_to_phase():
    u = mw_pulse_unitary(SPEC, "minus", 2 * np.pi, 0.3)
    sub = u[np.ix_([1, 2], [1, 2])]
    assert np.allclose(sub, sub[0, 0] * np.eye(2), atol=1e-12)
    assert abs(abs(sub[0, 0]) - 1) < 1e-12
    assert u[0, 0] == 1


def test_two_half_pi_pulses_make_a_pi_pulse():
    half = mw_pulse_unitary(SPEC, "plus", np.pi / 2, 0.7)
    full = mw_pulse_unitary(SPEC, "plus", np.pi, 0.7)
    assert np.allclose(half @ half, full, atol=1e-12)


def test_pi_pulse_transfers_population():
    u = mw_pulse_unitary(SPEC, "minus", np.pi)
    psi = u @ np.array([0, 1, 0])
    assert abs(abs(psi[2]) - 1) < 1e-12


@given(st.sampled_from(["minus", "plus"]), st.floats(1e-3, 2 * np.pi), st.floats(-10, 10),
       st.sampled_from([None, "N14", "N15"]))
def test_pulse_unitary(transition, angle, phase, iso):
    spec = SpinSystemSpec(b_field=(0, 0, 50.0), nitrogen=NitrogenSpec(iso) if iso else None)
    u = mw_pulse_unitary(spec, transition, angle, phase)
    assert np.max(np.abs(u.conj().T @ u - np.eye(spec.dim))) < 1e-12


def test_unresolved_lines_raise_selectivity_error():
    with pytest.raises(SelectivityError):
        mw_pulse_unitary(SpinSystemSpec(b_field=(0, 0, 0.01)), "minus", np.pi)


def test_element_validation():
    with pytest.raises(ValueError):
        pulse("minus", 0.0)
    with pytest.raises(ValueError):
        pulse("minus", 7.0)
    with pytest.raises(ValueError):
        pulse("sideways", np.pi)
    with pytest.raises(ValueError):
        wait(-1.0)
    with pytest.raises(ValueError):
        PulseSequence(())
    with pytest.raises(ValueError):
        PulseElement("laser")


def test_serialization_round_trip():
    seq = PulseSequence(d_ramsey_sequence(12.5, 0.3).elements + (wait(1.0, (0, 0, 0.1)),))
    back = PulseSequence.loads(seq.dumps())
    assert back == seq
    assert seq.total_free_time == pytest.approx(13.5)


# --- sequences ---------------------------------------------------------------

def test_d_ramsey_elements():
    seq = d_ramsey_sequence(10.0)
    kinds = [(e.kind, e.transition) for e in seq.elements]
    assert kinds[0] == ("mw_pulse", "minus") and kinds[-1] == ("mw_pulse", "plus")
    assert seq.elements[1].duration == seq.elements[-2].duration == 5.0
    with pytest.raises(ValueError):
        d_ramsey_sequence(0.0)


def test_d_ramsey_zero_tau_limit_is_fringe_maximum():
    assert run_sequence(EvolutionContext(SPEC, delta_d=50.0), d_ramsey_limit_sequence()) == pytest.approx(1.0, abs=1e-12)
    curve = signal_curve(EvolutionContext(SPEC, delta_d=50.0), d_ramsey_sequence, [0.0, 1e-9])
    assert np.allclose(curve, 1.0, atol=1e-9)


@pytest.mark.parametrize("delta_d", [25.0, 50.0])
def test_d_ramsey_oscillates_at_crystal_field_shift(delta_d):
    tau = np.linspace(0, 100, 41)
    sig = signal_curve(EvolutionContext(SPEC, delta_d=delta_d), d_ramsey_sequence, tau)
    assert np.max(np.abs(sig - fringe(delta_d, tau))) < 1e-6


def test_d_ramsey_is_echo_for_static_field():
    tau = np.linspace(0, 200, 21)
    ref = signal_curve(EvolutionContext(SPEC), d_ramsey_sequence, tau)
    off = signal_curve(EvolutionContext(SPEC, (0, 0, 0.1)), d_ramsey_sequence, tau)
    assert np.max(np.abs(off - ref)) < 1e-6


def test_d_ramsey_phase_diagnostics():
    ctx = EvolutionContext(SPEC, (0, 0, 0.1), delta_d=50.0)
    run_sequence(ctx, d_ramsey_sequence(7.0))
    assert ctx.phi_b == 0.0
    assert ctx.phi_d == pytest.approx(-2 * np.pi * 50e-3 * 7.0)
    run_sequence(ctx, ramsey_sequence(7.0))
    assert ctx.phi_b == pytest.approx(2 * np.pi * GAMMA * 0.1 * 1e3 * 7e-3)


def test_mirrored_d_ramsey_has_same_frequency():
    def mirrored(tau):
        flip = {"minus": "plus", "plus": "minus"}
        return PulseSequence(tuple(
            pulse(flip[e.transition], e.rotation_angle, e.pulse_phase) if e.kind == "mw_pulse" else e
            for e in d_ramsey_sequence(tau).elements))

    tau = np.linspace(0, 80, 17)
    sig = signal_curve(EvolutionContext(SPEC, delta_d=40.0), mirrored, tau[1:])
    assert np.max(np.abs(sig - fringe(40.0, tau[1:]))) < 1e-6


def test_ramsey_fringe_at_detuning():
    tau = np.linspace(0, 2, 41)
    sig = signal_curve(EvolutionContext(SPEC, (0, 0, 0.01)), ramsey_sequence, tau)
    assert np.max(np.abs(sig - fringe(GAMMA * 0.01 * 1e3, tau))) < 1e-6


def test_hahn_echo_refocuses_field_and_crystal_field():
    tau = np.linspace(0, 200, 11)
    for ctx in (EvolutionContext(SPEC, (0, 0, 0.1)), EvolutionContext(SPEC, delta_d=50.0),
                EvolutionContext(SPEC, (0, 0, -0.3), delta_d=-120.0)):
        sig = signal_curve(ctx, hahn_echo_sequence, tau)
        assert np.max(np.abs(sig - 1.0)) < 1e-6
    assert run_sequence(EvolutionContext(SPEC), hahn_echo_sequence(0.0)) == pytest.approx(1.0, abs=1e-12)


def test_piecewise_field_segments():
    # a field offset confined to one half of an echo is not refocused
    seq = PulseSequence((pulse("minus", np.pi / 2), wait(5.0, (0, 0, 0.001)), pulse("minus", np.pi),
                         wait(5.0), pulse("minus", np.pi / 2)))
    assert run_sequence(EvolutionContext(SPEC), seq) < 0.99


# --- properties ----------------------------------------------------------------

@given(st.floats(1, 500), st.floats(-0.5, 0.5), st.floats(1, 300))
def test_d_ramsey_duality(delta_d, db, tau):
    sig = run_sequence(EvolutionContext(SPEC, (0, 0, db), delta_d=delta_d), d_ramsey_sequence(tau))
    assert abs(sig - fringe(delta_d, tau)) < 1e-5


@given(st.lists(st.tuples(st.sampled_from(["minus", "plus"]), st.floats(0.01, 2 * np.pi),
                          st.floats(-np.pi, np.pi), st.floats(0, 3)), min_size=1, max_size=30),
       st.floats(-1, 1), st.floats(-500, 500))
def test_signal_in_unit_interval(items, db, dd):
    els = []
    for tr, angle, phase, t in items:
        els += [pulse(tr, angle, phase), wait(t)]
    ctx = EvolutionContext(SPEC, (0, 0, db), delta_d=dd)
    assert 0.0 <= run_sequence(ctx, PulseSequence(els)) <= 1.0


def test_norm_preserved_over_long_sequence():
    rng = np.random.default_rng(4)
    els = []
    for _ in range(600):
        els.append(pulse(rng.choice(["minus", "plus"]), rng.uniform(0.1, 2 * np.pi), rng.uniform(-3, 3)))
        els.append(wait(rng.uniform(0, 2), (rng.normal(0, 0.1), 0, rng.normal(0, 0.1))))
    ctx = EvolutionContext(SPEC, (0.01, 0.0, 0.05), delta_d=30.0)
    _, psi = run_sequence(ctx, PulseSequence(els), return_state=True)
    assert abs(np.linalg.norm(psi.amplitudes) - 1) < 1e-9


def test_ramsey_suppression_ratio():
    """Plain Ramsey follows gamma_e*dB one-for-one; D-Ramsey suppresses it by >= 1e3."""
    tau = 3.0
    db = 1e-4
    ram = lambda b: run_sequence(EvolutionContext(SPEC, (0, 0, b)), ramsey_sequence(tau, readout_phase=np.pi / 2))
    dr = lambda b: run_sequence(EvolutionContext(SPEC, (0, 0, b)), d_ramsey_sequence(tau, readout_phase=np.pi / 2))
    slope_r = (ram(db) - ram(-db)) / (2 * db)
    slope_d = (dr(db) - dr(-db)) / (2 * db)
    assert abs(slope_r) == pytest.approx(np.pi * GAMMA * tau, rel=1e-3)
    assert abs(slope_d) < 1e-3 * abs(slope_r)
