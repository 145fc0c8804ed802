import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import encoding
from baqudit.errors import ConfigError, InfeasibleError
from baqudit.noise import NoiseParams
from baqudit.state_selection import (Encoding, brute_force_pairs, build_graph, gaussian_time,
                                     pairwise_coherence_times, search_star_sets, set_cost, usable)


def test_gaussian_time_definition():
    # exp(-(2 pi sigma t)^2 / 2) reaches 1/e at t = 1/(sqrt(2) pi sigma)
    sigma = 123.0
    T = gaussian_time(sigma) * 1e-6
    assert np.exp(-((2 * np.pi * sigma * T) ** 2) / 2) == pytest.approx(np.exp(-1))
    assert gaussian_time(0.0) == np.inf


def test_laser_terms_cancel_within_a_manifold(table1):
    lg, ll, _ = pairwise_coherence_times(1.0, -1.0, False, table1)
    assert lg == ll == np.inf
    lg, ll, bg = pairwise_coherence_times(1.0, 1.0, True, table1)
    assert np.isfinite(lg) and np.isfinite(ll) and bg == np.inf


def test_graph_shortest_paths(transitions):
    g = build_graph(transitions)
    assert np.allclose(g.pi, g.pi.T)
    n = len(g.labels)
    assert n == 29  # five S(2,m) plus 24 D levels
    # D-D pairs are reached through one S level: minimum over common neighbours
    d_idx = [i for i in range(n) if not g.in_s[i]]
    s_idx = [i for i in range(n) if g.in_s[i]]
    for a, b in itertools.combinations(d_idx[:8], 2):
        via = min(g.direct[a, s] + g.direct[s, b] for s in s_idx)
        assert g.pi[a, b] <= via + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 28), st.integers(0, 28), st.integers(0, 28))
def test_triangle_inequality(a, b, c):
    import conftest
    g = build_graph(conftest._transitions())
    assert g.pi[a, c] <= g.pi[a, b] + g.pi[b, c] + 1e-9


def test_d2_search_matches_pair_brute_force(transitions, table1):
    s = search_star_sets(2, transitions, table1)
    cost, hub, leaf = brute_force_pairs(transitions, table1)
    assert s.cost == pytest.approx(cost, rel=1e-12)
    assert (s.hub, s.leaves) == (hub, (leaf,))
    assert s.proven_optimal


@pytest.mark.parametrize("d", [3, 4])
def test_star_search_matches_itertools(d, transitions, table1):
    g = build_graph(transitions)
    good = usable(transitions)
    best = None
    for hub in sorted({t.lower.label for t in good}):
        leaves = sorted({t.upper.label for t in good if t.lower.label == hub})
        for combo in itertools.combinations(leaves, d - 1):
            c, _ = set_cost(g, [g.index(x) for x in (hub,) + combo], table1)
            if best is None or c < best[0]:
                best = (c, hub, set(combo))
    s = search_star_sets(d, transitions, table1)
    assert s.cost == pytest.approx(best[0], rel=1e-10)
    assert s.hub == best[1] and set(s.leaves) == best[2]


def test_cost_grows_with_noise(transitions, table1):
    g = build_graph(transitions)
    members = [0, 10, 12]
    base, tau = set_cost(g, members, table1)
    worse, tau2 = set_cost(g, members, NoiseParams(fwhm_B=2 * table1.fwhm_B))
    assert tau == tau2 and worse >= base
    assert set_cost(g, members, NoiseParams.noiseless())[0] == 0.0


@pytest.mark.parametrize("d", [2, 5, 9, 17, 20, 25])
def test_encodings_validate_and_link_to_hub(d):
    enc = encoding(d)
    enc.validate()
    assert enc.d == d and enc.dim >= d
    hub = enc.levels[enc.hub_index]
    for leaf, tid in enc.leaf_links.items():
        t = enc.transitions[tid]
        assert enc.hub_index in (t.lower, t.upper) and leaf in (t.lower, t.upper)
    for leaf, route in enc.routes.items():
        assert d > 17
        assert enc.transitions[route[0]].lower == enc.hub_index
    assert hub.startswith("S")


def test_encoding_json_round_trip(tmp_path):
    enc = encoding(20)
    path = tmp_path / "enc.json"
    enc.save(path)
    again = Encoding.load(path)
    assert again.to_dict() == json.loads(path.read_text())
    assert again.levels == enc.levels and again.transitions == enc.transitions
    bad = enc.to_dict() | {"extra": 1}
    with pytest.raises(ConfigError):
        Encoding.from_dict(bad)
    with pytest.raises(ConfigError):
        Encoding.load(tmp_path / "missing.json")


def test_infeasible_dimensions(transitions, table1):
    with pytest.raises(InfeasibleError):
        encoding(26)
    with pytest.raises(InfeasibleError):
        search_star_sets(3, transitions, table1, min_rel_strength=2.0)
    with pytest.raises(ConfigError):
        search_star_sets(1, transitions, table1)
