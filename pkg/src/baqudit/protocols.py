"""Experiments: qudit Ramsey analytics and simulation, contrast scans, BV and CCCNOT."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .compiler import Frame, StarCircuit, bv_circuit, cccnot_circuit, shorten_rotations
from .errors import ConfigError, InfeasibleError
from .noise import NoiseParams
from .simulator import (PulseSequence, TransitionSpec, VirtualZ, basis_state, ideal_unitary,
                        monte_carlo, run_sequence, shot_populations)
from .state_selection import Encoding

# ---------------------------------------------------------------------------
# Closed forms


def ramsey_angles(d: int) -> list[float]:
    """theta_l = 2 arcsin(1/sqrt(d-l+1)) for l = 1..d-1."""
    if d < 2:
        raise ConfigError("dimension must be >= 2")
    return [2 * np.arcsin(1 / np.sqrt(d - l + 1)) for l in range(1, d)]


def ideal_p0(d: int, phi: float) -> float:
    m = np.arange(1, d)
    return float(1 / d + 2 / d**2 * np.sum((d - m) * np.cos(m * phi)))


def _g(l: int, d: int, phi: float) -> float:
    hi = np.arange(l + 1, d)
    lo = np.arange(1, d - l)
    return float(
        1 / d
        + 2 / (d * (d - l + 1) * (d - l)) * np.sum(np.cos(hi * phi))
        - 2 / (d * (d - l + 1)) * (np.cos(l * phi) + np.sum((lo + 1) / (d - l) * np.cos(lo * phi)))
    )


def ideal_populations(d: int, phi: float, l: int) -> float:
    if not 0 <= l < d:
        raise ConfigError("level index out of range")
    if l == 0:
        return ideal_p0(d, phi)
    if l == d - 1:
        return float((1 - np.cos((d - 1) * phi)) / d)
    return _g(l, d, phi)


def detuned_p0(d: int, phi: float, deltas: Sequence[float], t: float) -> float:
    """P0 after a wait t with small detunings deltas[l-1] (rad per unit t) on level l.

    Valid when every |Delta_l| is small against the Rabi frequencies.
    """
    if len(deltas) != d - 1:
        raise ConfigError("need one detuning per non-hub level")
    ph = np.concatenate([[0.0], np.arange(1, d) * phi + np.asarray(deltas, dtype=float) * t])
    total = 1 / d + 2 / d**2 * np.sum(np.cos(ph[1:]))
    for l in range(1, d - 1):
        total += 2 / d**2 * np.sum(np.cos(ph[l + 1:] - ph[l]))
    return float(total)


def reference_phase(d: int) -> float:
    """pi for even d, pi (d-1)/d for odd d."""
    return np.pi if d % 2 == 0 else np.pi * (d - 1) / d


def contrast(d: int, p0_at_0: float, p0_at_ref: float) -> float:
    if d < 2:
        raise ConfigError("dimension must be >= 2")
    return float(p0_at_0 - p0_at_ref)


# ---------------------------------------------------------------------------
# Sequences


@dataclass(frozen=True)
class LogicalPulse:
    """A rotation of Bloch angle theta and phase phi between the hub and leaf l."""

    leaf: int
    theta: float
    phi: float


def qudit_ramsey_sequences(d: int, phi: float) -> tuple[list[LogicalPulse], list[LogicalPulse]]:
    """Forward pulses (l = 1..d-1, phase -pi/2) and reverse pulses (l = d-1..1, phase pi/2 + l phi).

    With the hub on the lower level, the forward pulse on leaf l is the real rotation
    that moves 1/(d-l+1) of the hub population to |l>, and the reverse pulse at phi = 0
    is its inverse.
    """
    ang = ramsey_angles(d)
    fwd = [LogicalPulse(l, ang[l - 1], -np.pi / 2) for l in range(1, d)]
    rev = [LogicalPulse(l, ang[l - 1], np.pi / 2 + l * phi) for l in range(d - 1, 0, -1)]
    return fwd, rev


def _orient(spec: TransitionSpec, a: int, b: int, theta: float, phi: float) -> tuple[str, float, float]:
    """Pulse (id, angle, phase) for G(theta, phi) acting on the ordered pair (a, b)."""
    if (spec.lower, spec.upper) == (a, b):
        ph = phi
    elif (spec.lower, spec.upper) == (b, a):
        ph = np.pi - phi
    else:
        raise ConfigError(f"transition {spec.id} does not join levels {a} and {b}")
    return spec.id, 2 * theta, ph + np.pi / 2


def _other(spec: TransitionSpec, x: int) -> int:
    if spec.lower == x:
        return spec.upper
    if spec.upper == x:
        return spec.lower
    raise ConfigError(f"transition {spec.id} does not touch level {x}")


def givens_ops(enc: Encoding, leaf: int, theta: float, phi: float) -> list[tuple[str, float, float]]:
    """Physical pulses realising G(theta, phi) on (hub, leaf), composite if routed."""
    h = enc.hub_index
    if leaf in enc.leaf_links:
        return [_orient(enc.transitions[enc.leaf_links[leaf]], h, leaf, theta, phi)]
    if leaf not in enc.routes:
        raise ConfigError(f"no link for logical state {leaf}")
    ids = enc.routes[leaf]
    if len(ids) != 3:
        raise ConfigError("composite routes must have three links (hub-a, a-b, b-target)")
    s0, s1, s2 = (enc.transitions[i] for i in ids)
    a = _other(s0, h)
    b = _other(s1, a)
    if _other(s2, b) != leaf:
        raise ConfigError(f"route for state {leaf} does not end on it")
    # Q = Swap(a,b) Swap(b,t) moves the leaf amplitude onto a; conjugate G(h, a) by Q
    q = [_orient(s2, b, leaf, np.pi / 2, 0.0), _orient(s1, a, b, np.pi / 2, 0.0)]
    q_inv = [_orient(s1, a, b, -np.pi / 2, 0.0), _orient(s2, b, leaf, -np.pi / 2, 0.0)]
    return q + [_orient(s0, h, a, theta, phi)] + q_inv


def _pulse_to_givens(p: LogicalPulse) -> tuple[float, float]:
    # a hub-lower pulse of angle theta, phase phi is G(theta/2, phi - pi/2)
    return p.theta / 2, p.phi - np.pi / 2


def ramsey_sequence(enc: Encoding, phi: float, gap_us: float = 0.0, wait_us: float = 0.0) -> PulseSequence:
    """Qudit Ramsey pulse sequence on an encoding (hub must be logical 0)."""
    if enc.hub_index != 0:
        raise ConfigError("Ramsey sequences need the hub at logical index 0")
    fwd, rev = qudit_ramsey_sequences(enc.d, phi)
    ops: list = []
    for p in fwd:
        ops += givens_ops(enc, p.leaf, *_pulse_to_givens(p))
    ops_rev: list = []
    for p in rev:
        ops_rev += givens_ops(enc, p.leaf, *_pulse_to_givens(p))
    first = PulseSequence.build(enc.dim, enc.transitions, ops, gap_us)
    second = PulseSequence.build(enc.dim, enc.transitions, ops_rev, gap_us)
    offset = first.total_time + (gap_us if first.pulses else 0.0) + wait_us
    items = list(first.items) + [_shift(it, offset) for it in second.items]
    return PulseSequence(enc.dim, dict(enc.transitions), tuple(items), enc.levels,
                         {"protocol": "qudit_ramsey", "d": enc.d, "phi": phi})


def _shift(it, dt: float):
    return replace(it, start_time=it.start_time + dt)


def circuit_sequence(circ: StarCircuit, enc: Encoding, gap_us: float = 0.0) -> PulseSequence:
    """Lay a logical star circuit onto an encoding."""
    if circ.dim != enc.d:
        raise ConfigError(f"circuit dimension {circ.dim} does not match encoding d={enc.d}")
    if circ.hub != enc.hub_index:
        raise ConfigError(f"circuit hub {circ.hub} differs from encoding hub {enc.hub_index}")
    pad = enc.dim - enc.d
    ops: list = []
    for o in shorten_rotations(circ).ops:
        if isinstance(o, Frame):
            ops.append(VirtualZ(tuple(o.z) + (0.0,) * pad))
        else:
            ops += givens_ops(enc, o.i, o.theta, o.phi)
    return PulseSequence.build(enc.dim, enc.transitions, ops, gap_us, enc.levels, {"circuit": circ.name})


# ---------------------------------------------------------------------------
# Simulation drivers


@dataclass(frozen=True)
class ContrastPoint:
    d: int
    p0_zero: float
    p0_ref: float
    phi_ref: float
    contrast: float
    interval: tuple[float, float]
    n_shots: int

    def to_dict(self) -> dict:
        return {"d": self.d, "p0_phi0": self.p0_zero, "p0_phiref": self.p0_ref, "phi_ref": self.phi_ref,
                "contrast": self.contrast, "contrast_lo": self.interval[0], "contrast_hi": self.interval[1],
                "shots": self.n_shots}


def ramsey_contrast(enc: Encoding, params: NoiseParams, n_shots: int, seed: int, gap_us: float = 0.0,
                    threads: int = 1, model: str = "paper", binomial: bool = False) -> ContrastPoint:
    """Monte-Carlo contrast at phi = 0 and the parity reference phase (common random numbers)."""
    ref = reference_phase(enc.d)
    res = [monte_carlo(ramsey_sequence(enc, ph, gap_us), params, n_shots, seed, 0, None, binomial, threads, model)
           for ph in (0.0, ref)]
    a, b = res[0].mean, res[1].mean
    c = contrast(enc.d, a, b)
    # 1-sigma band from the two Wilson intervals added in quadrature
    ea = 0.5 * (res[0].interval[1] - res[0].interval[0])
    eb = 0.5 * (res[1].interval[1] - res[1].interval[0])
    e = float(np.hypot(ea, eb))
    return ContrastPoint(enc.d, a, b, ref, c, (c - e, c + e), n_shots)


@dataclass(frozen=True)
class ContrastScan:
    points: tuple[ContrastPoint, ...]

    @property
    def dims(self) -> np.ndarray:
        return np.array([p.d for p in self.points])

    @property
    def contrasts(self) -> np.ndarray:
        return np.array([p.contrast for p in self.points])

    def spearman(self) -> tuple[float, float]:
        r = spearmanr(self.dims, self.contrasts)
        return float(r.statistic), float(r.pvalue)

    def get(self, d: int) -> ContrastPoint:
        for p in self.points:
            if p.d == d:
                return p
        raise KeyError(d)


def contrast_scan(dims: Sequence[int], encodings: Mapping[int, Encoding] | Callable[[int], Encoding],
                  params: NoiseParams, n_shots: int, seed: int, gap_us: float = 0.0, threads: int = 1,
                  model: str = "paper") -> ContrastScan:
    pts = []
    for d in dims:
        if callable(encodings):
            enc = encodings(d)
        elif d in encodings:
            enc = encodings[d]
        else:
            raise ConfigError(f"no encoding for d={d}")
        pts.append(ramsey_contrast(enc, params, n_shots, seed, gap_us, threads, model))
    return ContrastScan(tuple(pts))


def fringe_contrast(p: Sequence[float]) -> float:
    """Amplitude of a cosine fringe sampled at phases 0, pi/2, pi, 3pi/2."""
    p0, p1, p2, p3 = p
    return float(np.hypot(p0 - p2, p1 - p3))


def bussed_dd_sequence(j: TransitionSpec, k: TransitionSpec, dim: int, phi: float,
                       wait_us: float = 0.0) -> PulseSequence:
    """Ramsey between two D5/2 levels j, k sharing the S1/2 bus; starts and ends on the bus.

    Transfer pi to j, pi/2 back to the bus, pi from bus to k; wait; undo with the
    analysis phase phi on the pi/2 pulse.  Every rotation touches the bus.
    """
    if j.lower != k.lower:
        raise ConfigError("both links must share the bus level")
    trans = {j.id: j, k.id: k}
    prep = PulseSequence.build(dim, trans, [(j.id, np.pi, 0.0), (j.id, np.pi / 2, 0.0), (k.id, np.pi, 0.0)])
    read = PulseSequence.build(dim, trans, [(k.id, np.pi, np.pi), (j.id, np.pi / 2, np.pi + phi),
                                            (j.id, np.pi, np.pi)])
    offset = prep.total_time + wait_us
    items = list(prep.items) + [_shift(it, offset) for it in read.items]
    return PulseSequence(dim, trans, tuple(items), (), {"protocol": "bussed_dd_ramsey", "phi": phi})


def bussed_dd_contrast(j: TransitionSpec, k: TransitionSpec, dim: int, params: NoiseParams, n_shots: int,
                       seed: int, wait_us: float = 0.0, model: str = "phase_only",
                       realization_override=None) -> float:
    """Fringe contrast of the bussed D-D Ramsey; bus population at four analysis phases."""
    pops = []
    for ph in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
        seq = bussed_dd_sequence(j, k, dim, ph, wait_us)
        init = basis_state(dim, j.lower)
        if realization_override is not None:
            psi = run_sequence(seq, init, realization_override, params, model)
            pops.append(float(abs(psi[j.lower]) ** 2))
        else:
            pops.append(monte_carlo(seq, params, n_shots, seed, j.lower, init, model=model).mean)
    return fringe_contrast(pops)


@dataclass(frozen=True)
class BVResult:
    n: int
    success: dict  # key -> probability of measuring the key
    histograms: dict  # key -> outcome distribution
    n_shots: int

    @property
    def mean_success(self) -> float:
        return float(np.mean(list(self.success.values())))

    def to_dict(self) -> dict:
        return {"n": self.n, "shots": self.n_shots, "mean_success": self.mean_success,
                "success": {str(k): v for k, v in self.success.items()},
                "histograms": {str(k): list(map(float, v)) for k, v in self.histograms.items()}}


def bernstein_vazirani(n: int, enc: Encoding, params: NoiseParams, n_shots: int, seed: int,
                       keys: Sequence[int] | None = None, fast_superposition: bool | None = None,
                       gap_us: float = 0.0, threads: int = 1, model: str = "paper",
                       binomial: bool = False) -> BVResult:
    if enc.d != 2**n:
        raise ConfigError(f"BV with n={n} needs a d={2**n} encoding")
    keys = list(range(2**n)) if keys is None else list(keys)
    succ, hist = {}, {}
    for key in keys:
        seq = circuit_sequence(bv_circuit(n, key, fast_superposition), enc, gap_us)
        r = monte_carlo(seq, params, n_shots, seed, key, basis_state(enc.dim, 0), binomial, threads, model)
        succ[key] = r.mean
        hist[key] = r.populations[: enc.d]
    return BVResult(n, succ, hist, n_shots)


@dataclass(frozen=True)
class TruthTable:
    matrix: np.ndarray  # [input, output] probability

    @property
    def expected(self) -> np.ndarray:
        perm = np.eye(16)
        perm[[14, 15]] = perm[[15, 14]]
        return perm

    @property
    def mean_correct(self) -> float:
        return float(np.mean(np.sum(self.matrix * self.expected, axis=1)))


def cccnot_truth_table(enc: Encoding, params: NoiseParams, n_shots: int, seed: int, gap_us: float = 0.0,
                       threads: int = 1, model: str = "paper") -> TruthTable:
    if enc.d != 16 or enc.hub_index != 14:
        raise ConfigError("CCCNOT needs a 16-state encoding with the hub at logical 14 (|1110>)")
    seq = circuit_sequence(cccnot_circuit(), enc, gap_us)
    rows = []
    for x in range(16):
        pops = shot_populations(seq, params, n_shots, seed, basis_state(enc.dim, x), threads, model)
        rows.append(pops.mean(axis=0)[:16])
    return TruthTable(np.array(rows))


def noiseless_fidelity(seq: PulseSequence, target: np.ndarray, d: int) -> float:
    """Population-weighted check helper: |<target|U|0>|^2 on the logical block."""
    U = ideal_unitary(seq)[:d, :d]
    return float(abs(np.vdot(target, U[:, 0])) ** 2)


# ---------------------------------------------------------------------------
# Noise-threshold scan


@dataclass(frozen=True)
class ThresholdResult:
    source: str
    d: int
    target_loss: float
    scale: float
    loss: float
    iterations: int


_SCALE_FIELDS = {
    "B": ("fwhm_B",),
    "laser": ("voigt_G_Hz", "voigt_L_Hz"),
    "laser_gauss": ("voigt_G_Hz",),
    "laser_lorentz": ("voigt_L_Hz",),
    "freq": ("fwhm_f_Hz",),
    "tau": ("fwhm_tau_cal", "fwhm_tau_drift"),
    "tau_cal": ("fwhm_tau_cal",),
    "tau_drift": ("fwhm_tau_drift",),
}
_SOURCE_FLAGS = {"B": ("B",), "laser": ("laser_gauss", "laser_lorentz"), "laser_gauss": ("laser_gauss",),
                 "laser_lorentz": ("laser_lorentz",), "freq": ("freq",), "tau": ("tau_cal", "tau_drift"),
                 "tau_cal": ("tau_cal",), "tau_drift": ("tau_drift",)}


def scaled_params(params: NoiseParams, source: str, scale: float) -> NoiseParams:
    if source not in _SCALE_FIELDS:
        raise ConfigError(f"unknown noise source {source!r}; choose from {sorted(_SCALE_FIELDS)}")
    upd = {f: getattr(params, f) * scale for f in _SCALE_FIELDS[source]}
    return replace(params, enabled=frozenset(_SOURCE_FLAGS[source]), **upd)


def scan_noise_threshold(enc: Encoding, params: NoiseParams, source: str, target_loss: float, n_shots: int,
                         seed: int, lo: float = 0.0, hi: float = 1024.0, iterations: int = 16,
                         model: str = "paper", threads: int = 1) -> ThresholdResult:
    """Bisect the scale of one source (others off) until contrast loss hits ``target_loss``.

    Common random numbers make the loss monotone in the scale for a fixed seed.
    """
    if not 0 < target_loss < 1:
        raise ConfigError("target loss must lie in (0, 1)")

    def loss(s: float) -> float:
        return 1.0 - ramsey_contrast(enc, scaled_params(params, source, s), n_shots, seed,
                                     threads=threads, model=model).contrast

    if loss(hi) < target_loss:
        raise InfeasibleError(f"loss at scale {hi} stays below the target; raise the upper bound")
    a, b = lo, hi
    for _ in range(iterations):
        m = 0.5 * (a + b)
        if loss(m) < target_loss:
            a = m
        else:
            b = m
    s = 0.5 * (a + b)
    return ThresholdResult(source, enc.d, target_loss, s, loss(s), iterations)
