import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import encoding
from baqudit.errors import ConfigError, InfeasibleError
from baqudit.noise import NoiseRealization
from baqudit.protocols import (bernstein_vazirani, bussed_dd_contrast, cccnot_truth_table, contrast,
                               detuned_p0, fringe_contrast, ideal_p0, ideal_populations,
                               qudit_ramsey_sequences, ramsey_angles, ramsey_contrast, ramsey_sequence,
                               reference_phase, scaled_params, scan_noise_threshold, bussed_dd_sequence)
from baqudit.simulator import TransitionSpec, basis_state, ideal_unitary, run_sequence


def _rot(d, l, theta, phi):
    # Bloch rotation by theta with phase phi on the (0, l) pair
    U = np.eye(d, dtype=complex)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    U[0, 0] = U[l, l] = c
    U[0, l] = -1j * np.exp(1j * phi) * s
    U[l, 0] = -1j * np.exp(-1j * phi) * s
    return U


def _brute(d, phi, extra_phases=None):
    fwd, rev = qudit_ramsey_sequences(d, phi)
    U = np.eye(d, dtype=complex)
    for p in fwd:
        U = _rot(d, p.leaf, p.theta, p.phi) @ U
    if extra_phases is not None:
        U = np.diag(np.exp(1j * np.concatenate([[0.0], extra_phases]))) @ U
    for p in rev:
        U = _rot(d, p.leaf, p.theta, p.phi) @ U
    return np.abs(U[:, 0]) ** 2


@pytest.mark.parametrize("d", range(2, 11))
def test_populations_match_matrix_products(d):
    rng = np.random.default_rng(d)
    for phi in rng.uniform(-np.pi, np.pi, 20):
        brute = _brute(d, phi)
        closed = [ideal_populations(d, phi, l) for l in range(d)]
        assert np.max(np.abs(brute - closed)) < 1e-10


@pytest.mark.parametrize("d", range(2, 11))
def test_forward_pulses_make_equal_superposition(d):
    U = np.eye(d, dtype=complex)
    for p in qudit_ramsey_sequences(d, 0.0)[0]:
        U = _rot(d, p.leaf, p.theta, p.phi) @ U
    assert np.allclose(np.abs(U[:, 0]) ** 2, 1 / d, atol=1e-12)


@pytest.mark.parametrize("d", range(2, 18))
def test_p0_zeros(d):
    for k in range(1, d):
        assert abs(ideal_p0(d, 2 * np.pi * k / d)) < 1e-12
    assert ideal_p0(d, 0.0) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.floats(-10, 10))
def test_populations_sum_to_one(d, phi):
    assert sum(ideal_populations(d, phi, l) for l in range(d)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.floats(-np.pi, np.pi), st.integers(0, 2**31 - 1))
def test_detuned_p0_is_dephased_brute_force(d, phi, seed):
    # a detuning on |l> acts like an extra phase on that level between the two halves
    deltas = np.random.default_rng(seed).normal(0, 1, d - 1)
    t = 0.3
    brute = _brute(d, phi, deltas * t)
    assert detuned_p0(d, phi, deltas, t) == pytest.approx(brute[0], abs=1e-10)


def test_reference_phase_and_angles():
    assert reference_phase(4) == np.pi
    assert reference_phase(5) == pytest.approx(4 * np.pi / 5)
    assert ramsey_angles(2) == [pytest.approx(np.pi / 2)]
    assert contrast(3, 0.9, 0.1) == pytest.approx(0.8)
    with pytest.raises(ConfigError):
        ramsey_angles(1)
    with pytest.raises(ConfigError):
        ideal_populations(3, 0.0, 3)


def test_fringe_contrast_of_cosine():
    ph = np.array([0, np.pi / 2, np.pi, 3 * np.pi / 2])
    assert fringe_contrast(0.5 + 0.4 * np.cos(ph + 0.3)) == pytest.approx(0.8)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 8])
def test_simulated_sequence_reproduces_closed_form(d):
    enc = encoding(d)
    for phi in (0.0, 0.7, reference_phase(d)):
        psi = ideal_unitary(ramsey_sequence(enc, phi)) @ basis_state(enc.dim, enc.hub_index)
        p = np.abs(psi[: d]) ** 2
        assert p[enc.hub_index] == pytest.approx(ideal_p0(d, phi), abs=1e-10)


@pytest.mark.parametrize("d", range(2, 18))
def test_noiseless_contrast_is_one(d, noiseless):
    pt = ramsey_contrast(encoding(d), noiseless, 1, seed=0)
    assert pt.contrast == pytest.approx(1.0, abs=1e-8)


def _dd_links(transitions):
    # two D levels fed from the same S level
    j, k = [t for t in transitions if t.lower.label == "S(2,0)"][:2]
    return (TransitionSpec(j.id, 0, 1, j.sensitivity, j.pi_time),
            TransitionSpec(k.id, 0, 2, k.sensitivity, k.pi_time))


def test_bussed_contrast_independent_of_laser_offset(transitions, table1):
    j, k = _dd_links(transitions)
    vals = [bussed_dd_contrast(j, k, 3, table1, 1, 0, wait_us=200.0,
                               realization_override=NoiseRealization(dB=3e-6, dL=dl))
            for dl in (0.0, 500.0, -500.0)]
    assert max(vals) - min(vals) < 1e-9
    assert vals[0] < 1.0  # the field offset does dephase the pair


def _fringe_phase(j, k, wait, real, params):
    p = [abs(run_sequence(bussed_dd_sequence(j, k, 3, ph, wait), basis_state(3, 0), real, params,
                          "phase_only")[0]) ** 2 for ph in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)]
    return np.angle((p[0] - p[2]) + 1j * (p[1] - p[3]))


def test_laser_offset_phase_does_not_grow_with_wait(transitions, table1):
    # a constant laser offset only adds a wait-independent fringe phase (set by the pulse durations)
    j, k = _dd_links(transitions)
    quiet = table1.without("line")
    shifts = []
    for wait in (0.0, 200.0, 1000.0):
        a = _fringe_phase(j, k, wait, NoiseRealization(dB=2e-6, dL=500.0), quiet)
        b = _fringe_phase(j, k, wait, NoiseRealization(dB=2e-6), quiet)
        shifts.append(np.angle(np.exp(1j * (a - b))))
    assert np.ptp(shifts) < 1e-9


def test_bussed_contrast_noiseless(transitions, noiseless):
    j, k = _dd_links(transitions)
    assert bussed_dd_contrast(j, k, 3, noiseless, 1, 0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        bussed_dd_contrast(j, TransitionSpec("x", 1, 2), 3, noiseless, 1, 0)


@pytest.mark.parametrize("n", [2, 3])
def test_bv_noiseless(n, noiseless):
    res = bernstein_vazirani(n, encoding(2**n), noiseless, 1, seed=0)
    for key, p in res.success.items():
        assert p == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ConfigError):
        bernstein_vazirani(n, encoding(3), noiseless, 1, seed=0)


def test_cccnot_noiseless(noiseless):
    tt = cccnot_truth_table(encoding(16, hub_index=14), noiseless, 1, seed=0)
    assert np.allclose(tt.matrix, tt.expected, atol=1e-10)
    assert tt.mean_correct == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ConfigError):
        cccnot_truth_table(encoding(16), noiseless, 1, seed=0)


def test_scaled_params(table1):
    p = scaled_params(table1, "laser", 2.0)
    assert p.voigt_G_Hz == 2 * table1.voigt_G_Hz and p.voigt_L_Hz == 2 * table1.voigt_L_Hz
    assert p.enabled == frozenset({"laser_gauss", "laser_lorentz"})
    with pytest.raises(ConfigError):
        scaled_params(table1, "cosmic", 1.0)


def test_threshold_scan(table1):
    enc = encoding(3)
    res = scan_noise_threshold(enc, table1, "freq", 0.05, 32, seed=1, hi=64.0, iterations=8)
    assert res.loss >= 0.05 * 0.5
    with pytest.raises(InfeasibleError):
        scan_noise_threshold(enc, table1, "freq", 0.999, 16, seed=1, hi=1e-3, iterations=2)
    with pytest.raises(ConfigError):
        scan_noise_threshold(enc, table1, "freq", 1.5, 16, seed=1)
