"""SPAM error model: metastable decay, off-resonant driving, discrimination, NBOP pumping.

Frequencies are in MHz and times in microseconds unless a name says otherwise.  A
transition with relative strength r and reference pi-time tau has Rabi frequency
Omega = r / (2 tau), so that a resonant pulse of length tau / r is a pi pulse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import poisson

from .angular import clebsch_gordan
from .atomic_structure import (Transition, default_constants, product_basis, sideband_augmented_table,
                               solve_manifold)
from .errors import ConfigError

D52_LIFETIME_S = 30.1
EXPOSURE_MS = 5.0
SECULAR_MHZ = (1.27, 1.46, 0.215)
ETA = 0.014
NBAR = 140.0
# P3/2 branching fraction into S1/2 (remainder goes to D5/2 and D3/2)
P32_TO_S12 = 0.741


# ---------------------------------------------------------------------------
# Decay


@dataclass(frozen=True)
class ChannelResult:
    per_state: np.ndarray
    average: float

    def to_dict(self) -> dict:
        return {"per_state": [float(x) for x in self.per_state], "average": self.average}


def decay_error(positions: Sequence[int], lifetime_s: float = D52_LIFETIME_S,
                exposure_ms: float = EXPOSURE_MS) -> ChannelResult:
    """Infidelity 1 - exp(-n t_exp / tau) for each readout position n.

    exp(-t/tau) is the survival probability of the shelved state.  The average runs over
    the positions given (1..d-1 for a d-state plan).
    """
    if lifetime_s <= 0 or exposure_ms <= 0:
        raise ConfigError("lifetime and exposure must be positive")
    n = np.asarray(positions, dtype=float)
    if np.any(n < 0):
        raise ConfigError("readout positions must be non-negative")
    err = -np.expm1(-n * exposure_ms * 1e-3 / lifetime_s)
    return ChannelResult(err, float(err.mean()) if err.size else 0.0)


def plan_decay_error(plan: "SpamPlan", lifetime_s: float = D52_LIFETIME_S,
                     exposure_ms: float = EXPOSURE_MS) -> ChannelResult:
    """Decay of the D5/2 states of a plan, read out at positions 1..d-1."""
    return decay_error(range(1, plan.d), lifetime_s, exposure_ms)


# ---------------------------------------------------------------------------
# Off-resonant driving


def rabi_lineshape(f, f_i, omega_i, t):
    """Omega_i^2/(Omega_i^2+(f-f_i)^2) sin^2(sqrt(Omega_i^2+(f-f_i)^2) pi t)."""
    det2 = (np.asarray(f) - f_i) ** 2
    w2 = omega_i**2 + det2
    return omega_i**2 / w2 * np.sin(np.sqrt(w2) * np.pi * t) ** 2


@dataclass(frozen=True)
class Line:
    lower: str
    upper: str
    frequency: float
    rabi: float  # MHz
    kind: str


@dataclass(frozen=True)
class SpamPlan:
    """Readout plan: hub |0> in S1/2 and D5/2 states in de-shelving order.

    ``links[k]`` is the transition used to shelve and de-shelve state k+1.
    ``herald`` is the transition used to herald |0>.
    """

    zero: str
    order: tuple[str, ...]
    links: tuple[Transition, ...]
    herald: Transition | None
    reference_pi_time_us: float = 30.0

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise ConfigError("readout order must not repeat states")
        if len(self.links) != len(self.order):
            raise ConfigError("one link per D5/2 state is required")

    @property
    def d(self) -> int:
        return 1 + len(self.order)

    def truncated(self, d: int) -> "SpamPlan":
        if not 1 <= d <= self.d:
            raise ConfigError(f"cannot truncate a {self.d}-state plan to d={d}")
        return SpamPlan(self.zero, self.order[: d - 1], self.links[: d - 1], self.herald,
                        self.reference_pi_time_us)

    def pulse_time(self, t: Transition) -> float:
        return self.reference_pi_time_us / t.rel_strength

    def to_dict(self) -> dict:
        return {"zero": self.zero, "order": list(self.order), "links": [t.id for t in self.links],
                "herald": self.herald.id if self.herald else None,
                "reference_pi_time_us": self.reference_pi_time_us}


def default_plan(transitions: Sequence[Transition], reference_pi_time_us: float = 30.0) -> SpamPlan:
    """All 24 D5/2 levels plus the S1/2 level with the fastest link.

    Each D level uses its strongest link; readout runs from the strongest link to the
    weakest.  |0> is heralded through its strongest link.
    """
    best: dict[str, Transition] = {}
    for t in transitions:
        cur = best.get(t.upper.label)
        if cur is None or (t.rel_strength, t.lower.label) > (cur.rel_strength, cur.lower.label):
            best[t.upper.label] = t
    herald = max(transitions, key=lambda t: (t.rel_strength, -abs(t.sensitivity), t.id))
    links = sorted(best.values(), key=lambda t: (-t.rel_strength, t.upper.label))
    return SpamPlan(herald.lower.label, tuple(t.upper.label for t in links), tuple(links), herald,
                    reference_pi_time_us)


def plan_from_mapping(data: Mapping, transitions: Sequence[Transition]) -> SpamPlan:
    """Plan from {"zero", "order", "links": [transition ids], "herald", "reference_pi_time_us"}."""
    allowed = {"zero", "order", "links", "herald", "reference_pi_time_us"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in SPAM plan: {sorted(extra)}")
    by_id = {t.id: t for t in transitions}
    try:
        links = tuple(by_id[i] for i in data["links"])
        herald = by_id[data["herald"]] if data.get("herald") else None
        plan = SpamPlan(str(data["zero"]), tuple(data["order"]), links, herald,
                        float(data.get("reference_pi_time_us", 30.0)))
    except KeyError as exc:
        raise ConfigError(f"SPAM plan references unknown transition or misses a key: {exc}") from exc
    for lab, t in zip(plan.order, plan.links):
        if t.upper.label != lab:
            raise ConfigError(f"link {t.id} does not address {lab}")
    return plan


def spectral_lines(transitions: Sequence[Transition], reference_pi_time_us: float,
                   secular_MHz: Sequence[float] = SECULAR_MHZ, eta: float = ETA,
                   nbar: float = NBAR) -> list[Line]:
    """Carriers and first sidebands with Rabi frequencies in MHz."""
    by_id = {t.id: t for t in transitions}
    out = []
    for ln in sideband_augmented_table(transitions, tuple(secular_MHz), eta, nbar):
        t = by_id[ln.carrier]
        out.append(Line(t.lower.label, t.upper.label, ln.frequency,
                        ln.strength / (2 * reference_pi_time_us), ln.kind))
    return out


def _pulse_error(lines: Sequence[Line], f: float, t: float, skip: tuple[str, str] | None) -> float:
    tot = 0.0
    for ln in lines:
        if skip is not None and ln.kind == "carrier" and (ln.lower, ln.upper) == skip:
            continue
        tot += float(rabi_lineshape(f, ln.frequency, ln.rabi, t))
    return tot


def off_resonant_error(plan: SpamPlan, lines: Sequence[Line]) -> ChannelResult:
    """Per-state shelving plus de-shelving off-resonant error.

    Shelving state i sums the lineshape of every other line from the same S1/2 level at
    the shelving frequency.  De-shelving adds, for each earlier readout pulse, every line
    from state i back to S1/2.
    """
    from_s: dict[str, list[Line]] = {}
    from_d: dict[str, list[Line]] = {}
    for ln in lines:
        from_s.setdefault(ln.lower, []).append(ln)
        from_d.setdefault(ln.upper, []).append(ln)
    errs = []
    if plan.herald is not None:
        h = plan.herald
        errs.append(_pulse_error(from_s.get(h.lower.label, []), h.frequency, plan.pulse_time(h),
                                 (h.lower.label, h.upper.label)))
    else:
        errs.append(0.0)
    for k, (lab, t) in enumerate(zip(plan.order, plan.links)):
        e_s = _pulse_error(from_s.get(t.lower.label, []), t.frequency, plan.pulse_time(t),
                           (t.lower.label, t.upper.label))
        e_d = 0.0
        for prev in plan.links[:k]:
            e_d += _pulse_error(from_d.get(lab, []), prev.frequency, plan.pulse_time(prev), None)
        errs.append(e_s + e_d)
    arr = np.array(errs)
    return ChannelResult(arr, float(arr.mean()))


def off_resonant_jitter(plan: SpamPlan, transitions: Sequence[Transition], sigma_MHz: Sequence[float],
                        n_samples: int, seed: int, secular_MHz: Sequence[float] = SECULAR_MHZ,
                        eta: float = ETA, nbar: float = NBAR, correlation: float = 0.0) -> ChannelResult:
    """Average the off-resonant error over Gaussian jitter of the two radial frequencies."""
    rng = np.random.default_rng(seed)
    sx, sy = sigma_MHz
    cov = np.array([[sx * sx, correlation * sx * sy], [correlation * sx * sy, sy * sy]])
    draws = rng.multivariate_normal([0.0, 0.0], cov, size=n_samples)
    acc = None
    for dx, dy in draws:
        sec = (secular_MHz[0] + dx, secular_MHz[1] + dy) + tuple(secular_MHz[2:])
        r = off_resonant_error(plan, spectral_lines(transitions, plan.reference_pi_time_us, sec, eta, nbar))
        acc = r.per_state if acc is None else acc + r.per_state
    per = acc / n_samples
    return ChannelResult(per, float(per.mean()))


# ---------------------------------------------------------------------------
# Discrimination


@dataclass(frozen=True)
class Discrimination:
    false_positive: float  # dark state read as bright
    false_negative: float  # bright state read as dark
    threshold: int

    @property
    def total(self) -> float:
        return self.false_positive + self.false_negative


def discrimination_error(lam_dark: float, lam_bright: float, threshold: int) -> Discrimination:
    """Counts >= threshold are called bright."""
    if lam_dark < 0 or lam_bright < 0 or threshold < 0 or int(threshold) != threshold:
        raise ConfigError("Poisson means must be >= 0 and the threshold a non-negative integer")
    thr = int(threshold)
    fp = float(poisson.sf(thr - 1, lam_dark)) if thr > 0 else 1.0
    fn = float(poisson.cdf(thr - 1, lam_bright)) if thr > 0 else 0.0
    return Discrimination(fp, fn, thr)


def optimal_threshold(lam_dark: float, lam_bright: float, max_threshold: int | None = None) -> Discrimination:
    top = int(max_threshold or max(10, np.ceil(lam_bright + 10 * np.sqrt(lam_bright + 1))))
    results = [discrimination_error(lam_dark, lam_bright, t) for t in range(1, top + 1)]
    return min(results, key=lambda r: (r.total, r.threshold))


# ---------------------------------------------------------------------------
# Budget


@dataclass(frozen=True)
class SpamBudget:
    d: int
    decay: ChannelResult
    off_resonant: ChannelResult
    discrimination: ChannelResult

    @property
    def per_state_total(self) -> np.ndarray:
        return self.decay.per_state + self.off_resonant.per_state + self.discrimination.per_state

    @property
    def total(self) -> float:
        return self.decay.average + self.off_resonant.average + self.discrimination.average

    def to_dict(self, measured_fidelity: float | None = None) -> dict:
        out = {"d": self.d, "decay": self.decay.average, "off_resonant": self.off_resonant.average,
               "discrimination": self.discrimination.average, "total": self.total,
               "fidelity": 1 - self.total}
        if measured_fidelity is not None:
            out["measured_infidelity"] = 1 - measured_fidelity
            out["unexplained"] = 1 - measured_fidelity - self.total
        return out


@dataclass(frozen=True)
class SpamParams:
    lifetime_s: float = D52_LIFETIME_S
    exposure_ms: float = EXPOSURE_MS
    secular_MHz: tuple = SECULAR_MHZ
    eta: float = ETA
    nbar: float = NBAR
    # per-state bright/dark error; measured combined value at threshold 9
    discrimination_per_state: float = 5.6e-5
    lam_dark: float | None = None
    lam_bright: float | None = None
    threshold: int = 9


def spam_budget(plan: SpamPlan, transitions: Sequence[Transition], params: SpamParams = SpamParams(),
                d: int | None = None) -> SpamBudget:
    """Linear sum of the three channels, averaged over the first d prepared states.

    Every state enters the average, so |0> (read first, never shelved for long)
    contributes zero decay.
    """
    p = plan if d is None else plan.truncated(d)
    dec = decay_error(range(p.d), params.lifetime_s, params.exposure_ms)  # |0> is read first
    lines = spectral_lines(transitions, p.reference_pi_time_us, params.secular_MHz, params.eta, params.nbar)
    off = off_resonant_error(p, lines)
    if params.lam_dark is not None and params.lam_bright is not None:
        r = discrimination_error(params.lam_dark, params.lam_bright, params.threshold)
        # state at position n sees n dark checks then one bright check
        disc = np.array([n * r.false_positive + r.false_negative for n in range(p.d)])
    else:
        disc = np.full(p.d, params.discrimination_per_state)
    return SpamBudget(p.d, dec, off, ChannelResult(disc, float(disc.mean())))


def heatmap(plan: SpamPlan, transitions: Sequence[Transition], nu_x: Sequence[float], nu_y: Sequence[float],
            params: SpamParams = SpamParams()) -> np.ndarray:
    """Average off-resonant SPAM fidelity on a (nu_x, nu_y) grid (MHz)."""
    out = np.zeros((len(nu_x), len(nu_y)))
    for i, x in enumerate(nu_x):
        for j, y in enumerate(nu_y):
            sec = (x, y) + tuple(params.secular_MHz[2:])
            lines = spectral_lines(transitions, plan.reference_pi_time_us, sec, params.eta, params.nbar)
            out[i, j] = 1 - off_resonant_error(plan, lines).average
    return out


# ---------------------------------------------------------------------------
# Repumping and narrow-band optical pumping

P32_J = 1.5


def _p32_f3_states(I: float) -> dict[int, dict[tuple[float, float], float]]:
    """|P3/2, F=3, m> in the |mI, mJ> basis."""
    out = {}
    for m in range(-3, 4):
        vec = {}
        for mI, mJ in product_basis(I, P32_J):
            if mI + mJ == m:
                c = clebsch_gordan(I, mI, P32_J, mJ, 3, m)
                if c != 0:
                    vec[(mI, mJ)] = c
        out[m] = vec
    return out


def repump_excitation(B: float, polarization: Mapping[int, float] | None = None) -> tuple[list[str], np.ndarray]:
    """Row-normalised excitation probabilities D5/2 level -> |P3/2, F=3, m> (m = -3..3).

    The default polarization is equal sigma+ and sigma- with no pi component.
    """
    pol = {1: 0.5, -1: 0.5, 0: 0.0} if polarization is None else dict(polarization)
    _, d_const = default_constants()
    levels = solve_manifold(d_const, B)
    basis = product_basis(d_const.I, d_const.J)
    targets = _p32_f3_states(d_const.I)
    rows = np.zeros((len(levels), 7))
    for r, lv in enumerate(levels):
        for m in range(-3, 4):
            tot = 0.0
            for q, w in pol.items():
                if w <= 0:
                    continue
                amp = 0.0
                for k, (mI, mJ) in enumerate(basis):
                    c = lv.amplitudes[k]
                    if c == 0:
                        continue
                    cp = targets[m].get((mI, mJ + q))
                    if cp is None:
                        continue
                    amp += cp * c * clebsch_gordan(d_const.J, mJ, 1, q, P32_J, mJ + q)
                tot += w * abs(amp) ** 2
            rows[r, m + 3] = tot
        s = rows[r].sum()
        if s > 0:
            rows[r] /= s
    return [lv.label for lv in levels], rows


def p32_decay_to_s12_f2() -> np.ndarray:
    """Branching |P3/2, F=3, m> -> |S1/2, F=2, m'> within the S1/2 channel (rows: m, cols: m')."""
    out = np.zeros((7, 5))
    for m in range(-3, 4):
        for mp in range(-2, 3):
            q = m - mp
            if abs(q) <= 1:
                out[m + 3, mp + 2] = clebsch_gordan(2, mp, 1, q, 3, m) ** 2
    return out


def repump_pathways(B: float, polarization: Mapping[int, float] | None = None,
                    s_branching: float = P32_TO_S12) -> tuple[list[str], np.ndarray]:
    """D5/2 level -> S1/2 F=2 (m' = -2..2) probabilities for one repump cycle.

    Rows sum to ``s_branching``; the remainder decays back to the D manifolds.
    """
    labels, exc = repump_excitation(B, polarization)
    return labels, s_branching * exc @ p32_decay_to_s12_f2()


@dataclass(frozen=True)
class NbopResult:
    target: str
    populations: np.ndarray  # target population after 0..n_reps repetitions
    final: np.ndarray  # full distribution over S then D labels
    labels: tuple[str, ...]
    trapped: dict

    @property
    def saturated(self) -> float:
        return float(self.populations[-1])


def nbop_simulate(target: str, shelving: Mapping[str, str], n_reps: int, B: float = 4.209,
                  pulse_fidelity: float = 1.0, flush: np.ndarray | None = None,
                  polarization: Mapping[int, float] | None = None, warn_tol: float = 1e-6,
                  limit_reps: int = 2000) -> NbopResult:
    """Markov model of narrow-band optical pumping into the S1/2 F=2 level ``target``.

    Each repetition flushes F=1 into F=2 (uniformly unless ``flush`` is given), shelves
    each non-target F=2 level to its D5/2 partner in ``shelving``, then repumps.  The
    repump step runs to completion, so D5/2 population returns to S1/2 F=2 with the
    row-normalised pathway probabilities.
    """
    s_const, d_const = default_constants()
    s_levels = [lv.label for lv in solve_manifold(s_const, B)]
    d_labels, path = repump_pathways(B, polarization)
    labels = tuple(s_levels + d_labels)
    n_s = len(s_levels)
    idx = {k: i for i, k in enumerate(labels)}
    f2 = [lab for lab in s_levels if lab.startswith("S(2,")]
    f1 = [lab for lab in s_levels if lab.startswith("S(1,")]
    if target not in f2:
        raise ConfigError(f"target must be an S1/2 F=2 level, got {target!r}")
    need = set(f2) - {target}
    if set(shelving) != need:
        raise ConfigError(f"shelving must map exactly {sorted(need)} to D5/2 levels")
    if not 0 <= pulse_fidelity <= 1:
        raise ConfigError("pulse fidelity must lie in [0, 1]")
    n = len(labels)
    flush_m = np.eye(n)
    fm = np.full((len(f1), len(f2)), 1 / len(f2)) if flush is None else np.asarray(flush, float)
    for a, la in enumerate(f1):
        flush_m[idx[la], idx[la]] = 0.0
        for b, lb in enumerate(f2):
            flush_m[idx[la], idx[lb]] = fm[a, b]
    shelve_m = np.eye(n)
    for s, dlab in shelving.items():
        if dlab not in idx or not dlab.startswith("D"):
            raise ConfigError(f"unknown D5/2 level {dlab!r}")
        shelve_m[idx[s], idx[s]] = 1 - pulse_fidelity
        shelve_m[idx[s], idx[dlab]] = pulse_fidelity
    rep = np.eye(n)
    m_order = [f"S(2,{m})" for m in range(-2, 3)]
    for r, dlab in enumerate(d_labels):
        row = path[r]
        tot = row.sum()
        if tot <= 0:
            continue
        rep[idx[dlab], idx[dlab]] = 0.0
        for c, slab in enumerate(m_order):
            rep[idx[dlab], idx[slab]] = row[c] / tot
    step = flush_m @ shelve_m @ rep  # row vector convention: p <- p @ step
    p = np.zeros(n)
    p[:n_s] = 1.0 / n_s
    pops = [p[idx[target]]]
    for _ in range(n_reps):
        p = p @ step
        pops.append(p[idx[target]])
    if abs(p.sum() - 1) > 1e-12:
        raise ConfigError("Markov step does not conserve probability")
    q = p.copy()
    for _ in range(limit_reps):
        q = q @ step
    trapped = {}
    if q[idx[target]] < 1 - warn_tol:
        trapped = {labels[i]: float(q[i]) for i in range(n) if q[i] > warn_tol and labels[i] != target}
        warnings.warn(f"NBOP into {target} saturates at {q[idx[target]]:.4f}; trapped mass {trapped}",
                      RuntimeWarning, stacklevel=2)
    return NbopResult(target, np.array(pops), p, labels, trapped)


def benign_shelving(target: str, transitions: Sequence[Transition], B: float = 4.209,
                    min_rel_strength: float = 0.1) -> dict[str, str]:
    """For each non-target F=2 level, the usable D5/2 partner most likely to repump into ``target``."""
    d_labels, path = repump_pathways(B)
    col = int(target.split(",")[1].rstrip(")")) + 2
    score = {lab: path[r, col] / path[r].sum() if path[r].sum() > 0 else 0.0 for r, lab in enumerate(d_labels)}
    out = {}
    for s in {t.lower.label for t in transitions} - {target}:
        cands = [t for t in transitions if t.lower.label == s and t.rel_strength >= min_rel_strength]
        if not cands:
            raise ConfigError(f"no usable shelving transition from {s}")
        best = max(cands, key=lambda t: (score[t.upper.label], t.rel_strength, t.upper.label))
        out[s] = best.upper.label
    return out
