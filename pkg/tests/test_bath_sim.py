import numpy as np
import pytest
import scipy.constants as sc
from hypothesis import given
from hypothesis import strategies as st

from nvthermo import bath_sim as bs
from nvthermo.pulse_engine import PulseSequence, d_ramsey_sequence, hahn_echo_sequence, pulse, ramsey_sequence, wait
from nvthermo.spin_model import SpinSystemSpec

SPEC = SpinSystemSpec(b_field=(0.0, 0.0, 50.0))


def hyperfine_prefactor_oracle():
    # mu0/4pi * h * gamma_e * gamma_n / r^3 with gammas in Hz/T, r in nm -> kHz nm^3
    return sc.mu_0 / (4 * np.pi) * sc.h * 28.024e9 * 10.705e6 / 1e-27 / 1e3


def realistic_subset(seed, n, cutoff=3.0):
    bath = bs.sample_bath(bs.BathConfig(concentration=0.011, cutoff_radius=cutoff, seed=seed))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(bath), size=n, replace=False)
    return [bath[i] for i in sorted(idx)]


# --- geometry and couplings ---------------------------------------------------------

def test_prefactor_matches_physical_constants():
    assert bs.HYPERFINE_PREFACTOR == pytest.approx(hyperfine_prefactor_oracle(), rel=1e-4)


def test_on_axis_coupling():
    azz, azx, azy = bs.dipolar_hyperfine((0, 0, 0.5))
    assert azx == 0 and azy == 0
    assert azz == pytest.approx(2 * bs.HYPERFINE_PREFACTOR / 0.125, rel=1e-12)


def test_magic_angle_zero():
    theta = np.arccos(1 / np.sqrt(3))
    pos = 0.7 * np.array([np.sin(theta), 0, np.cos(theta)])
    assert abs(bs.dipolar_hyperfine(pos)[0]) < 1e-12


def test_zero_distance_rejected():
    with pytest.raises(ValueError):
        bs.dipolar_hyperfine((0, 0, 0))


@given(st.tuples(*[st.floats(-3, 3)] * 3).filter(lambda p: np.linalg.norm(p) > 0.1))
def test_inverse_cube_scaling(pos):
    a = np.array(bs.dipolar_hyperfine(pos))
    b = np.array(bs.dipolar_hyperfine(2 * np.array(pos)))
    assert np.allclose(b, a / 8, rtol=1e-12, atol=1e-15)


def test_lattice_geometry():
    sites = bs.lattice_sites(1.5)
    r = np.linalg.norm(sites, axis=1)
    assert np.all(r > bs.EXCLUSION_RADIUS) and np.all(r <= 1.5)
    assert np.all(np.diff(r) >= -1e-12)
    # nearest-neighbour bond length a*sqrt(3)/4 survives in the NV frame
    d = np.linalg.norm(sites[:, None] - sites[None], axis=-1)
    assert np.min(d[d > 0]) == pytest.approx(0.357 * np.sqrt(3) / 4, rel=1e-9)
    # bulk density 8/a^3 for a large sphere
    n = len(bs.lattice_sites(3.0))
    expect = 8 / 0.357 ** 3 * 4 / 3 * np.pi * (3.0 ** 3 - 0.25 ** 3)
    assert n == pytest.approx(expect, rel=0.02)


# --- sampling ------------------------------------------------------------------

def test_empty_bath_at_zero_concentration():
    assert bs.sample_bath(bs.BathConfig(concentration=0.0)) == []


def test_same_seed_same_bath():
    cfg = bs.BathConfig(concentration=0.02, cutoff_radius=2.0, seed=11)
    assert bs.sample_bath(cfg) == bs.sample_bath(cfg)


def test_expected_spin_count_binomial():
    n_sites = len(bs.lattice_sites(1.0))
    c = 0.05
    counts = np.array([len(bs.sample_bath(bs.BathConfig(c, 1.0, seed=s))) for s in range(1000)])
    mean_se = np.sqrt(n_sites * c * (1 - c) / len(counts))
    assert abs(counts.mean() - n_sites * c) < 3 * mean_se
    assert counts.var(ddof=1) == pytest.approx(n_sites * c * (1 - c), rel=0.15)


def test_bath_size_cap():
    with pytest.raises(bs.BathSizeError):
        bs.sample_bath(bs.BathConfig(concentration=0.5, cutoff_radius=5.0, max_spins=1000))


def test_config_validation():
    with pytest.raises(ValueError):
        bs.BathConfig(concentration=1.5)
    with pytest.raises(ValueError):
        bs.BathConfig(cutoff_radius=0)


def test_bath_csv_round_trip():
    bath = bs.sample_bath(bs.BathConfig(concentration=0.02, cutoff_radius=1.5, seed=3))
    text = "# provenance comment\n" + bs.bath_to_csv(bath)
    assert bs.bath_from_csv(text) == bath


# --- coherence -----------------------------------------------------------------

def test_schedule_families():
    assert bs.coherence_schedule(ramsey_sequence(2.0)) == [(1.0, 0, -1)]
    assert bs.coherence_schedule(hahn_echo_sequence(2.0)) == [(0.5, 0, -1), (0.5, -1, 0)]
    assert bs.coherence_schedule(d_ramsey_sequence(2.0)) == [(0.5, 0, -1), (0.5, 0, 1)]
    with pytest.raises(NotImplementedError):
        bs.coherence_schedule(PulseSequence((pulse("minus", 1.0), wait(1.0), pulse("minus", np.pi / 2))))


def test_empty_bath_is_flat():
    curve = bs.cce_coherence(SPEC, [], d_ramsey_sequence(1.0), [0, 1, 10])
    assert np.array_equal(curve.coherence, [1, 1, 1])


@pytest.mark.parametrize("factory", [d_ramsey_sequence, hahn_echo_sequence, ramsey_sequence])
@pytest.mark.parametrize("n", [1, 2])
def test_cce_equals_exact_small_baths(factory, n):
    tau = bs.default_tau_grid(1.0, 3000.0, 8)
    for seed in range(5):
        bath = realistic_subset(seed, n)
        cce = bs.cce_coherence(SPEC, bath, factory(1.0), tau).coherence
        exact = bs.exact_bath_coherence(SPEC, bath, factory(1.0), tau)
        assert np.max(np.abs(cce - exact)) < 1e-6


def test_cce_close_to_exact_for_three_spins():
    tau = bs.default_tau_grid(1.0, 2000.0, 8)
    for seed in range(3):
        bath = realistic_subset(seed, 3)
        cce = bs.cce_coherence(SPEC, bath, d_ramsey_sequence(1.0), tau).coherence
        exact = bs.exact_bath_coherence(SPEC, bath, d_ramsey_sequence(1.0), tau)
        assert np.max(np.abs(cce - exact)) < 0.02


@given(st.integers(0, 10 ** 6), st.floats(1, 100))
def test_coherence_bounded_and_normalized(seed, bz):
    bath = bs.sample_bath(bs.BathConfig(concentration=0.011, cutoff_radius=1.2, seed=seed, b_z=bz))
    spec = SpinSystemSpec(b_field=(0, 0, bz))
    curve = bs.cce_coherence(spec, bath, d_ramsey_sequence(1.0), bs.default_tau_grid(1, 1e4, 4))
    assert abs(curve.coherence[0] - 1) < 1e-9
    assert np.all(np.abs(curve.coherence) <= 1 + 1e-9)


def test_curve_csv_and_validation():
    curve = bs.CoherenceCurve([0.0, 1.0], [1.0, 0.5 + 0.1j])
    lines = curve.to_csv().splitlines()
    assert lines[0] == "tau_us,l_real,l_imag,l_abs"
    assert [float(v) for v in lines[2].split(",")] == [1.0, 0.5, 0.1, abs(0.5 + 0.1j)]
    assert np.array_equal(curve.l_values, [1.0, 0.5])
    with pytest.raises(ValueError):
        bs.CoherenceCurve([0.0], [1.0, 2.0])


def test_divergent_pair_corrections_fall_back_to_first_order():
    bz = 2.0
    bath = bs.sample_bath(bs.BathConfig(concentration=0.011, cutoff_radius=1.2, seed=0, b_z=bz))
    spec = SpinSystemSpec(b_field=(0, 0, bz))
    tau = bs.default_tau_grid(1, 1e4, 4)
    two = bs.cce_coherence(spec, bath, d_ramsey_sequence(1.0), tau)
    one = bs.cce_coherence(spec, bath, d_ramsey_sequence(1.0), tau, order=1)
    assert np.isfinite(two.breakdown_tau)
    late = tau >= two.breakdown_tau
    assert np.array_equal(two.coherence[late], one.coherence[late])
    assert np.all(np.abs(two.coherence) <= 1 + 1e-9)


def test_unsupported_order():
    with pytest.raises(NotImplementedError):
        bs.cce_coherence(SPEC, [], d_ramsey_sequence(1.0), [1.0], order=3)


# --- decay estimation ----------------------------------------------------------

def test_fit_recovers_exponential():
    tau = np.linspace(0, 500, 101)
    t_d, p, _, _ = bs.estimate_t_d(bs.CoherenceCurve(tau, np.exp(-tau / 100)))
    assert t_d == pytest.approx(100, rel=0.01) and p == pytest.approx(1, rel=0.01)


def test_fit_recovers_gaussian():
    tau = np.linspace(0, 200, 101)
    t_d, p, _, _ = bs.estimate_t_d(bs.CoherenceCurve(tau, np.exp(-(tau / 50) ** 2)))
    assert t_d == pytest.approx(50, rel=0.01) and p == pytest.approx(2, rel=0.01)


def test_flat_curve_needs_extrapolation_flag():
    curve = bs.CoherenceCurve(np.linspace(0, 10, 11), np.ones(11))
    with pytest.raises(bs.FitRangeError):
        bs.estimate_t_d(curve)
    assert bs.estimate_t_d(curve, allow_extrapolation=True)[0] == np.inf


def test_extrapolated_slow_decay():
    tau = np.linspace(0, 100, 51)
    t_d, _, _, _ = bs.estimate_t_d(bs.CoherenceCurve(tau, np.exp(-tau / 1000)), allow_extrapolation=True)
    assert t_d == pytest.approx(1000, rel=0.01)


def test_envelope_follows_revivals():
    env = bs.decay_envelope([1.0, 0.2, 0.6, 0.1, 0.3])
    assert np.array_equal(env, [1.0, 0.6, 0.6, 0.3, 0.3])


# --- ensembles -----------------------------------------------------------------

def test_tau_grid_and_seeds():
    grid = bs.default_tau_grid(1, 1e4, 100)
    assert grid[0] == 0 and len(grid) == 4 * 64 + 2
    assert bs.realization_seeds(5, 4) == bs.realization_seeds(5, 4)
    assert len(set(bs.realization_seeds(5, 50))) == 50


def test_ensemble_independent_of_workers():
    cfg = bs.BathConfig(concentration=0.011, cutoff_radius=1.5, b_z=50.0)
    tau = bs.default_tau_grid(1, 1e4, 8)
    a = bs.ensemble_coherence(SPEC, cfg, d_ramsey_sequence(1.0), tau, n_realizations=4, master_seed=2)
    b = bs.ensemble_coherence(SPEC, cfg, d_ramsey_sequence(1.0), tau, n_realizations=4,
                              master_seed=2, workers=2)
    assert np.array_equal(a.t_d, b.t_d, equal_nan=True)
    for ca, cb in zip(a.curves, b.curves):
        assert np.array_equal(ca.coherence, cb.coherence)


def test_field_increases_t_d_for_fixed_bath():
    tau = bs.default_tau_grid(0.1, 1e5, 16)
    bath = bs.sample_bath(bs.BathConfig(concentration=0.01, cutoff_radius=2.0, seed=7))
    out = []
    for bz in (5.0, 50.0):
        curve = bs.cce_coherence(SpinSystemSpec(b_field=(0, 0, bz)), bath, d_ramsey_sequence(1.0), tau,
                                 pair_cutoff=1.0)
        out.append(bs.estimate_t_d(curve, allow_extrapolation=True)[0])
    assert out[0] < out[1]
