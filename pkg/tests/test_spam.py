import json
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from baqudit.errors import ConfigError
from baqudit.spam import (P32_TO_S12, Line, SpamParams, benign_shelving, decay_error, default_plan,
                          discrimination_error, heatmap, nbop_simulate, off_resonant_error,
                          optimal_threshold, p32_decay_to_s12_f2, plan_decay_error, plan_from_mapping,
                          rabi_lineshape, repump_excitation, repump_pathways, spam_budget, spectral_lines)


@pytest.fixture(scope="module")
def plan(transitions):
    return default_plan(transitions)


def test_decay_reference_fidelities():
    r = decay_error([1, 24])
    assert 1 - r.per_state[0] == pytest.approx(0.99983, abs=5e-6)
    assert 1 - r.per_state[1] == pytest.approx(0.9960, abs=5e-5)
    assert r.per_state[0] == pytest.approx(1 - np.exp(-0.005 / 30.1), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100), st.floats(0.1, 100.0), st.floats(0.1, 50.0))
def test_decay_monotone_and_bounded(n, tau, t_ms):
    a, b = decay_error([n, n + 1], tau, t_ms).per_state
    assert 0 <= a < b < 1


def test_decay_validation():
    with pytest.raises(ConfigError):
        decay_error([1], lifetime_s=0)
    with pytest.raises(ConfigError):
        decay_error([-1])


def test_plan_structure(plan, transitions):
    assert plan.d == 25
    assert len(set(plan.order)) == 24 and all(lab.startswith("D") for lab in plan.order)
    rel = [t.rel_strength for t in plan.links]
    assert rel == sorted(rel, reverse=True)
    assert plan.herald.lower.label == plan.zero
    assert plan_decay_error(plan).per_state.size == 24
    again = plan_from_mapping(json.loads(json.dumps(plan.to_dict())), transitions)
    assert again == plan
    with pytest.raises(ConfigError):
        plan_from_mapping({**plan.to_dict(), "colour": 1}, transitions)
    with pytest.raises(ConfigError):
        plan_from_mapping({**plan.to_dict(), "links": ["nope"] * 24}, transitions)
    with pytest.raises(ConfigError):
        plan.truncated(26)


@pytest.mark.parametrize("f,fi,om,t", [(0.0, 0.3, 0.01, 50.0), (1.2, 1.25, 0.02, 25.0), (5.0, 5.0, 0.016, 31.25)])
def test_single_line_matches_lineshape(f, fi, om, t):
    # independent form: (Omega/W)^2 (1 - cos(2 pi W t)) / 2
    W = np.hypot(om, f - fi)
    expected = (om / W) ** 2 * (1 - np.cos(2 * np.pi * W * t)) / 2
    assert rabi_lineshape(f, fi, om, t) == pytest.approx(expected, abs=1e-12)


def test_single_channel_terms_from_budget(plan, transitions):
    lines = spectral_lines(transitions, plan.reference_pi_time_us)
    t = plan.links[3]
    lab = plan.order[3]
    tp = plan.pulse_time(t)
    shelve = sum(rabi_lineshape(t.frequency, ln.frequency, ln.rabi, tp) for ln in lines
                 if ln.lower == t.lower.label and not (ln.kind == "carrier" and ln.upper == lab))
    deshelve = sum(rabi_lineshape(p.frequency, ln.frequency, ln.rabi, plan.pulse_time(p))
                   for p in plan.links[:3] for ln in lines if ln.upper == lab)
    assert off_resonant_error(plan, lines).per_state[4] == pytest.approx(shelve + deshelve, abs=1e-9)


def test_two_line_toy_model(transitions):
    plan = default_plan(transitions).truncated(2)
    t = plan.links[0]
    lines = [Line(t.lower.label, t.upper.label, t.frequency, 0.5 / 30, "carrier"),
             Line(t.lower.label, "D(9,9)", t.frequency + 0.4, 0.01, "carrier")]
    res = off_resonant_error(plan, lines)
    assert res.per_state[1] == pytest.approx(float(rabi_lineshape(t.frequency, t.frequency + 0.4, 0.01,
                                                                 plan.pulse_time(t))), abs=1e-15)


def test_no_sidebands_and_far_lines_are_small(plan, transitions):
    # with eta = 0 only carriers remain; carriers are tens of kHz apart or more
    lines = spectral_lines(transitions, plan.reference_pi_time_us, eta=0.0)
    assert all(ln.rabi == 0 for ln in lines if ln.kind != "carrier")
    far = [Line("S", "D", 1e3 * k, 0.01, "carrier") for k in range(1, 4)]
    for ln in far:
        assert rabi_lineshape(0.0, ln.frequency, ln.rabi, 30.0) < 1e-6


def test_off_resonant_average_reference(plan, transitions):
    lines = spectral_lines(transitions, plan.reference_pi_time_us)
    avg = off_resonant_error(plan, lines).average
    assert 2.03e-3 / 2 <= avg <= 2.03e-3 * 2


def _tails(lam_d, lam_b, thr):
    mpmath.mp.dps = 40
    lam_d, lam_b = mpmath.mpf(lam_d), mpmath.mpf(lam_b)
    below_d = mpmath.fsum(mpmath.exp(-lam_d) * lam_d**k / mpmath.factorial(k) for k in range(thr))
    below_b = mpmath.fsum(mpmath.exp(-lam_b) * lam_b**k / mpmath.factorial(k) for k in range(thr))
    return float(1 - below_d), float(below_b)


@pytest.mark.parametrize("lam_d,lam_b,thr", [(0.1, 20.0, 9), (0.5, 15.0, 4), (1.0, 30.0, 12), (0.05, 8.0, 1)])
def test_discrimination_matches_exact_tails(lam_d, lam_b, thr):
    r = discrimination_error(lam_d, lam_b, thr)
    fp, fn = _tails(lam_d, lam_b, thr)
    assert r.false_positive == pytest.approx(fp, rel=1e-9, abs=1e-300)
    assert r.false_negative == pytest.approx(fn, rel=1e-9, abs=1e-300)


def test_optimal_threshold_is_unique_minimum():
    best = optimal_threshold(0.2, 20.0)
    totals = [sum(_tails(0.2, 20.0, t)) for t in range(1, 40)]
    assert best.threshold == int(np.argmin(totals)) + 1
    assert sorted(totals)[0] < sorted(totals)[1]
    with pytest.raises(ConfigError):
        discrimination_error(-1, 2, 3)


def test_repump_sigma_only_selection_rules():
    labels, exc = repump_excitation(4.209)
    assert np.allclose(exc.sum(axis=1), 1.0)
    for lab, row in zip(labels, exc):
        m = int(lab.split(",")[1].rstrip(")"))
        reach = {m + q for q in (-1, 1)}
        for mp in range(-3, 4):
            if mp not in reach:
                assert row[mp + 3] < 1e-9, (lab, mp)


def test_p32_decay_rows_are_probabilities():
    M = p32_decay_to_s12_f2()
    assert np.allclose(M.sum(axis=1), 1.0)
    assert M[6, 4] == pytest.approx(1.0)  # stretched state decays only to stretched
    labels, P = repump_pathways(4.209)
    assert np.allclose(P.sum(axis=1), P32_TO_S12)
    assert P[labels.index("D(4,4)")] == pytest.approx([0, 0, 0, 0, P32_TO_S12])


def test_nbop_benign_reaches_target(transitions):
    shelving = benign_shelving("S(2,0)", transitions)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = nbop_simulate("S(2,0)", shelving, 200)
    assert res.saturated > 1 - 1e-6
    assert np.all(np.diff(res.populations) >= -1e-12)
    assert res.final.sum() == pytest.approx(1.0, abs=1e-12)


def test_nbop_pathological_plateau(transitions):
    shelving = benign_shelving("S(2,-2)", transitions)
    shelving["S(2,2)"] = "D(4,4)"
    with pytest.warns(RuntimeWarning):
        res = nbop_simulate("S(2,-2)", shelving, 200)
    assert res.saturated == pytest.approx(0.8, abs=1e-3)
    assert "S(2,2)" in res.trapped


def test_nbop_zero_reps_and_validation(transitions):
    res = nbop_simulate("S(2,0)", benign_shelving("S(2,0)", transitions), 0)
    assert res.populations.tolist() == [pytest.approx(1 / 8)]
    with pytest.raises(ConfigError):
        nbop_simulate("S(1,0)", {}, 1)
    with pytest.raises(ConfigError):
        nbop_simulate("S(2,0)", {"S(2,1)": "D(4,4)"}, 1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 1.0), st.integers(0, 30))
def test_nbop_mass_conservation(fid, reps):
    import conftest
    tr = conftest._transitions()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = nbop_simulate("S(2,1)", benign_shelving("S(2,1)", tr), reps, pulse_fidelity=fid)
    assert res.final.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(res.final >= -1e-15)


def test_budget_d2_and_linearity(plan, transitions):
    b2 = spam_budget(plan, transitions, d=2)
    assert b2.total < 5e-4
    assert b2.total == pytest.approx(b2.decay.average + b2.off_resonant.average + b2.discrimination.average)
    assert np.allclose(b2.per_state_total.mean(), b2.total)
    b = spam_budget(plan, transitions)
    # decay grows linearly with readout position while n t / tau << 1
    per = b.decay.per_state
    assert np.allclose(per, np.arange(25) * per[1], rtol=3e-3)
    d = b.to_dict(measured_fidelity=0.99)
    assert d["unexplained"] == pytest.approx(0.01 - b.total)


def test_budget_with_poisson_discrimination(plan, transitions):
    p = SpamParams(lam_dark=0.1, lam_bright=20.0, threshold=9)
    b = spam_budget(plan, transitions, p, d=3)
    r = discrimination_error(0.1, 20.0, 9)
    assert b.discrimination.per_state[2] == pytest.approx(2 * r.false_positive + r.false_negative)


def test_heatmap_shape_and_range(plan, transitions):
    small = plan.truncated(4)
    h = heatmap(small, transitions, [1.27, 1.5], [1.46])
    assert h.shape == (2, 1)
    assert np.all((h > 0.9) & (h <= 1.0))
