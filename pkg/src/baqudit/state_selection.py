"""Choice of physical state sets (encodings) by the transition-time/coherence cost.

Times are in microseconds, sensitivities in MHz/G.  The set cost is

    C = (tau_S^2 / l) sum 1/T_LG^2 + tau_S sum 1/T_LL + tau_S^2 sum 1/T_BG^2

with tau_S the summed pairwise pi-time of the set, l the number of participating
states and the sums over all participating pairs (infinite times contribute zero).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .atomic_structure import Transition
from .errors import ConfigError, InfeasibleError
from .noise import NoiseParams
from .simulator import TransitionSpec

DEFAULT_MIN_REL_STRENGTH = 0.035
STAR_LIMIT = 17


def usable(transitions: Sequence[Transition], min_rel_strength: float = DEFAULT_MIN_REL_STRENGTH,
           max_abs_sensitivity: float | None = None) -> list[Transition]:
    out = []
    for t in transitions:
        if not np.isfinite(t.rel_strength):
            raise ConfigError("transitions need relative strengths (use build_transitions)")
        if t.rel_strength < min_rel_strength:
            continue
        if max_abs_sensitivity is not None and abs(t.sensitivity) > max_abs_sensitivity:
            continue
        out.append(t)
    return out


@dataclass(frozen=True)
class LevelGraph:
    """Bipartite S/D transition graph with pi-time edge weights."""

    labels: tuple[str, ...]
    sensitivity: np.ndarray  # level dE/dB, MHz/G
    in_s: np.ndarray  # bool per level
    direct: np.ndarray  # single-pulse pi-time, inf if not linked
    pi: np.ndarray  # shortest-path pi-time
    links: Mapping[tuple[int, int], Transition]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError as exc:
            raise ConfigError(f"unknown level {label!r}") from exc


def build_graph(transitions: Sequence[Transition]) -> LevelGraph:
    levels = {}
    for t in transitions:
        levels.setdefault(t.lower.label, t.lower)
        levels.setdefault(t.upper.label, t.upper)
    s_labels = sorted((k for k in levels if k.startswith("S")), key=lambda k: levels[k].m)
    d_labels = sorted((k for k in levels if k.startswith("D")), key=lambda k: (levels[k].F, levels[k].m))
    labels = tuple(s_labels + d_labels)
    n = len(labels)
    idx = {k: i for i, k in enumerate(labels)}
    direct = np.full((n, n), np.inf)
    np.fill_diagonal(direct, 0.0)
    links = {}
    for t in transitions:
        a, b = idx[t.lower.label], idx[t.upper.label]
        if t.pi_time < direct[a, b]:
            direct[a, b] = direct[b, a] = t.pi_time
            links[(a, b)] = links[(b, a)] = t
    w = np.where(np.isfinite(direct), direct, 0.0)
    pi = shortest_path(w, method="FW", directed=False)
    sens = np.array([levels[k].dEdB for k in labels])
    in_s = np.array([k.startswith("S") for k in labels])
    return LevelGraph(labels, sens, in_s, direct, pi, links)


def all_pairs_pi_times(transitions: Sequence[Transition]) -> tuple[tuple[str, ...], np.ndarray]:
    g = build_graph(transitions)
    return g.labels, g.pi


# ---------------------------------------------------------------------------
# Coherence times and cost


def gaussian_time(sigma_hz: float) -> float:
    """1/e time (us) of exp(-t^2/T^2) for Gaussian frequency noise of std sigma_hz."""
    return np.inf if sigma_hz <= 0 else 1e6 / (np.sqrt(2.0) * np.pi * sigma_hz)


def pairwise_coherence_times(kappa_j: float, kappa_k: float, one_in_s: bool,
                             params: NoiseParams) -> tuple[float, float, float]:
    """(T_LG, T_LL, T_BG) in us for a pair of levels with sensitivities kappa (MHz/G).

    Laser terms apply only when exactly one level is in S1/2; otherwise the laser
    phase is common to both and cancels.
    """
    if one_in_s:
        t_lg = gaussian_time(params.voigt_G_Hz if params.on("laser_gauss") else 0.0)
        gam = params.voigt_L_Hz if params.on("laser_lorentz") else 0.0
        t_ll = np.inf if gam <= 0 else 1e6 / (2 * np.pi * gam)
    else:
        t_lg = t_ll = np.inf
    sig_b = params.sigma_B if params.on("B") else 0.0
    t_bg = gaussian_time(abs(kappa_j - kappa_k) * 1e6 * sig_b)
    return float(t_lg), float(t_ll), float(t_bg)


def _inv(x, p):
    return 0.0 if not np.isfinite(x) else 1.0 / x**p


def set_cost(graph: LevelGraph, members: Sequence[int], params: NoiseParams) -> tuple[float, float]:
    """(cost, tau_S) of the participating levels ``members`` (encoded and mediating)."""
    members = list(members)
    l = len(members)
    tau_s = 0.0
    s_lg = s_ll = s_bg = 0.0
    for a, b in itertools.combinations(members, 2):
        tau_s += graph.pi[a, b]
        lg, ll, bg = pairwise_coherence_times(graph.sensitivity[a], graph.sensitivity[b],
                                              bool(graph.in_s[a] != graph.in_s[b]), params)
        s_lg += _inv(lg, 2)
        s_ll += _inv(ll, 1)
        s_bg += _inv(bg, 2)
    if not np.isfinite(tau_s):
        return float("inf"), float("inf")
    return float(tau_s**2 / l * s_lg + tau_s * s_ll + tau_s**2 * s_bg), float(tau_s)


@dataclass(frozen=True)
class StateSet:
    hub: str
    leaves: tuple[str, ...]
    mediators: tuple[str, ...] = ()
    tau_s: float = 0.0
    cost: float = 0.0
    proven_optimal: bool = False
    routes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def members(self) -> tuple[str, ...]:
        return (self.hub,) + self.leaves

    @property
    def d(self) -> int:
        return 1 + len(self.leaves)

    @property
    def l(self) -> int:
        return self.d + len(self.mediators)


def _pair_arrays(graph: LevelGraph, params: NoiseParams):
    n = len(graph.labels)
    lg = np.zeros((n, n))
    ll = np.zeros((n, n))
    bg = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            t = pairwise_coherence_times(graph.sensitivity[a], graph.sensitivity[b],
                                         bool(graph.in_s[a] != graph.in_s[b]), params)
            lg[a, b] = lg[b, a] = _inv(t[0], 2)
            ll[a, b] = ll[b, a] = _inv(t[1], 1)
            bg[a, b] = bg[b, a] = _inv(t[2], 2)
    return lg, ll, bg


def _batch_pair_sum(M: np.ndarray, sets: np.ndarray) -> np.ndarray:
    sub = M[sets[:, :, None], sets[:, None, :]]
    return 0.5 * (sub.sum(axis=(1, 2)) - np.trace(sub, axis1=1, axis2=2))


def search_star_sets(
    d: int,
    transitions: Sequence[Transition],
    params: NoiseParams,
    min_rel_strength: float = DEFAULT_MIN_REL_STRENGTH,
    max_abs_sensitivity: float | None = None,
    hubs: Sequence[str] | None = None,
    batch: int = 20000,
) -> StateSet:
    """Exhaustive minimum-cost star: one S1/2 F=2 hub plus d-1 directly linked D5/2 leaves.

    Every leaf subset of every hub is scored, so the winner is provably optimal; ties
    go to the lexicographically smallest (hub, leaves) label tuple.
    """
    if d < 2:
        raise ConfigError("dimension must be >= 2")
    good = usable(transitions, min_rel_strength, max_abs_sensitivity)
    graph = build_graph(transitions)
    lg, ll, bg = _pair_arrays(graph, params)
    hub_labels = sorted({t.lower.label for t in good}) if hubs is None else list(hubs)
    best: tuple | None = None
    for hub in hub_labels:
        h = graph.index(hub)
        leaves = sorted({graph.index(t.upper.label) for t in good if t.lower.label == hub})
        if len(leaves) < d - 1:
            continue
        combos = itertools.combinations(leaves, d - 1)
        while True:
            chunk = list(itertools.islice(combos, batch))
            if not chunk:
                break
            sets = np.concatenate([np.full((len(chunk), 1), h), np.array(chunk, dtype=int)], axis=1)
            tau = _batch_pair_sum(graph.pi, sets)
            cost = tau**2 / d * _batch_pair_sum(lg, sets) + tau * _batch_pair_sum(ll, sets) \
                + tau**2 * _batch_pair_sum(bg, sets)
            k = int(np.argmin(cost))
            key = (float(cost[k]), hub, tuple(graph.labels[i] for i in chunk[k]))
            if best is None or key < best[:3]:
                best = key + (float(tau[k]),)
    if best is None:
        raise InfeasibleError(f"no hub has {d - 1} usable leaves (min relative strength {min_rel_strength})")
    cost, hub, leaves, tau = best
    return StateSet(hub, order_leaves(graph, hub, leaves), (), tau, cost, True)


def order_leaves(graph: LevelGraph, hub: str, leaves: Sequence[str]) -> tuple[str, ...]:
    """Leaves sorted by |transition sensitivity| then pi-time (most robust first)."""
    h = graph.index(hub)

    def key(lab: str):
        i = graph.index(lab)
        return (round(abs(graph.sensitivity[i] - graph.sensitivity[h]), 9), graph.direct[h, i], lab)

    return tuple(sorted(leaves, key=key))


def brute_force_pairs(transitions: Sequence[Transition], params: NoiseParams,
                      min_rel_strength: float = DEFAULT_MIN_REL_STRENGTH) -> tuple[float, str, str]:
    """Reference minimum over every single hub-leaf pair (d=2 check)."""
    graph = build_graph(transitions)
    best = None
    for t in usable(transitions, min_rel_strength):
        a, b = graph.index(t.lower.label), graph.index(t.upper.label)
        c, _ = set_cost(graph, [a, b], params)
        key = (c, t.lower.label, (t.upper.label,))
        if best is None or key < best:
            best = key
    return best[0], best[1], best[2][0]


def extend_greedy(base: StateSet, d: int, transitions: Sequence[Transition], params: NoiseParams,
                  min_rel_strength: float = DEFAULT_MIN_REL_STRENGTH) -> StateSet:
    """Grow a star beyond its hub's reach by composite routes.

    Each added D5/2 level is reached from the hub through an unencoded S1/2 level and a
    D5/2 level linked to both (hub -> D_a -> S_b -> target).  Candidates are scored by
    the added route duration and the new set cost; the cheapest is appended.
    """
    if d <= base.d:
        raise ConfigError("target dimension must exceed the base set size")
    graph = build_graph(usable(transitions, min_rel_strength))
    full = build_graph(transitions)
    leaves = list(base.leaves)
    mediators = list(base.mediators)
    routes = dict(base.routes)
    h = graph.index(base.hub)
    while 1 + len(leaves) < d:
        taken = set(leaves) | set(mediators) | {base.hub}
        best = None
        for tgt in graph.labels:
            if tgt in taken or graph.in_s[graph.index(tgt)]:
                continue
            ti = graph.index(tgt)
            for sb in graph.labels:
                bi = graph.index(sb)
                if not graph.in_s[bi] or sb == base.hub or not np.isfinite(graph.direct[bi, ti]):
                    continue
                for da in leaves:
                    ai = graph.index(da)
                    if not (np.isfinite(graph.direct[h, ai]) and np.isfinite(graph.direct[ai, bi])):
                        continue
                    route_time = graph.direct[h, ai] + graph.direct[ai, bi] + graph.direct[bi, ti]
                    new_med = mediators + ([sb] if sb not in mediators else [])
                    members = [full.index(x) for x in [base.hub] + leaves + [tgt] + new_med]
                    cost, _ = set_cost(full, members, params)
                    key = (cost, route_time, tgt, sb, da)
                    if best is None or key < best:
                        best = key
        if best is None:
            raise InfeasibleError(f"cannot extend the set to d={d}")
        _, _, tgt, sb, da = best
        leaves.append(tgt)
        if sb not in mediators:
            mediators.append(sb)
        routes[tgt] = (base.hub, da, sb, tgt)
    members = [full.index(x) for x in [base.hub] + leaves + mediators]
    cost, tau = set_cost(full, members, params)
    return StateSet(base.hub, tuple(leaves), tuple(mediators), tau, cost, False, routes)


# ---------------------------------------------------------------------------
# Encodings


@dataclass(frozen=True)
class Encoding:
    """Logical basis -> physical levels, plus the drivable links between them.

    Simulator indices: logical states 0..d-1 first, then mediating levels.
    """

    d: int
    levels: tuple[str, ...]  # logical order then mediators
    hub_index: int
    transitions: Mapping[str, TransitionSpec]
    leaf_links: Mapping[int, str]  # logical leaf index -> transition id to the hub (direct)
    routes: Mapping[int, tuple[str, ...]] = field(default_factory=dict)  # leaf -> transition ids
    B_G: float = 4.209
    metadata: Mapping[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.levels)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "levels": list(self.levels),
            "hub_index": self.hub_index,
            "B_G": self.B_G,
            "transitions": {k: {"lower": v.lower, "upper": v.upper, "sensitivity_MHz_per_G": v.kappa,
                                "pi_time_us": v.pi_time} for k, v in self.transitions.items()},
            "leaf_links": {str(k): v for k, v in self.leaf_links.items()},
            "routes": {str(k): list(v) for k, v in self.routes.items()},
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Encoding":
        allowed = {"d", "levels", "hub_index", "B_G", "transitions", "leaf_links", "routes", "metadata"}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown key(s) in encoding: {sorted(extra)}")
        try:
            trans = {}
            for k, v in data["transitions"].items():
                bad = set(v) - {"lower", "upper", "sensitivity_MHz_per_G", "pi_time_us"}
                if bad:
                    raise ConfigError(f"unknown key(s) in encoding transition {k}: {sorted(bad)}")
                trans[k] = TransitionSpec(k, int(v["lower"]), int(v["upper"]),
                                          float(v.get("sensitivity_MHz_per_G", 0.0)), float(v["pi_time_us"]))
            enc = cls(int(data["d"]), tuple(data["levels"]), int(data.get("hub_index", 0)), trans,
                      {int(k): str(v) for k, v in data.get("leaf_links", {}).items()},
                      {int(k): tuple(v) for k, v in data.get("routes", {}).items()},
                      float(data.get("B_G", 4.209)), dict(data.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed encoding: {exc}") from exc
        enc.validate()
        return enc

    def validate(self) -> None:
        if self.d < 2 or self.d > len(self.levels) or not 0 <= self.hub_index < self.d:
            raise ConfigError("encoding dimension/hub inconsistent with its levels")
        for leaf in range(self.d):
            if leaf == self.hub_index:
                continue
            if leaf not in self.leaf_links and leaf not in self.routes:
                raise ConfigError(f"logical state {leaf} has no link to the hub")
        for tid in list(self.leaf_links.values()) + [t for r in self.routes.values() for t in r]:
            if tid not in self.transitions:
                raise ConfigError(f"encoding references unknown transition {tid!r}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Encoding":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise ConfigError(f"encoding file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"encoding file is not valid JSON: {exc}") from exc


def encoding_from_set(sset: StateSet, transitions: Sequence[Transition], hub_index: int = 0,
                      B_G: float = 4.209) -> Encoding:
    """Build an encoding with the hub at logical ``hub_index`` and leaves in set order."""
    d = sset.d
    if not 0 <= hub_index < d:
        raise ConfigError("hub index out of range")
    logical = list(sset.leaves)
    logical.insert(hub_index, sset.hub)
    levels = tuple(logical) + tuple(sset.mediators)
    pos = {lab: i for i, lab in enumerate(levels)}
    by_pair = {}
    for t in transitions:
        if t.lower.label in pos and t.upper.label in pos:
            by_pair[(t.lower.label, t.upper.label)] = t
    specs: dict[str, TransitionSpec] = {}

    def spec(lower: str, upper: str) -> str:
        t = by_pair.get((lower, upper))
        if t is None:
            raise InfeasibleError(f"no transition {lower} <-> {upper}")
        specs[t.id] = TransitionSpec(t.id, pos[lower], pos[upper], t.sensitivity, t.pi_time)
        return t.id

    def s_d(a: str, b: str) -> str:
        return spec(a, b) if a.startswith("S") else spec(b, a)

    links, routes = {}, {}
    for i, lab in enumerate(logical):
        if i == hub_index:
            continue
        if lab in sset.routes:
            r = sset.routes[lab]
            routes[i] = tuple(s_d(r[k], r[k + 1]) for k in range(len(r) - 1))
        else:
            links[i] = s_d(sset.hub, lab)
    meta = {"hub": sset.hub, "cost": sset.cost, "tau_S_us": sset.tau_s, "proven_optimal": sset.proven_optimal}
    enc = Encoding(d, levels, hub_index, specs, links, routes, B_G, meta)
    enc.validate()
    return enc


def select_encoding(d: int, transitions: Sequence[Transition], params: NoiseParams,
                    hub_index: int = 0, min_rel_strength: float = DEFAULT_MIN_REL_STRENGTH,
                    max_abs_sensitivity: float | None = None, B_G: float = 4.209) -> Encoding:
    """Best star encoding for d <= STAR_LIMIT, greedy composite extension above."""
    if d <= STAR_LIMIT:
        sset = search_star_sets(d, transitions, params, min_rel_strength, max_abs_sensitivity)
    else:
        base = search_star_sets(STAR_LIMIT, transitions, params, min_rel_strength, max_abs_sensitivity)
        sset = extend_greedy(base, d, transitions, params, min_rel_strength)
    return encoding_from_set(sset, transitions, hub_index, B_G)
