"""State-vector simulation of pulse sequences under per-shot noise.

Rabi convention: a pulse of nominal Rabi frequency Omega (rad/s) and duration T rotates
by theta = Omega*T on the Bloch sphere, so theta = pi is a full transfer and
Omega = pi / t_pi.  Each pulse couples a lower (S1/2) level to an upper (D5/2) level
with the two-level Hamiltonian

    H = [[0, Omega/2 e^{i phi}], [Omega/2 e^{-i phi}, d_omega]]

and U = exp(-i H T).  Times in sequences are in microseconds.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ConfigError
from .noise import (
    MHZ_TO_HZ,
    NoiseParams,
    NoiseRealization,
    _line_terms,
    sample_shot,
)

US = 1e-6
CHUNK = 64  # shots per work unit; fixed so results do not depend on thread count
PULSE_MODELS = ("paper", "phase_only")


@dataclass(frozen=True)
class TransitionSpec:
    """A drivable link between basis index ``lower`` (S side) and ``upper`` (D side)."""

    id: str
    lower: int
    upper: int
    kappa: float = 0.0  # MHz/G
    pi_time: float = 30.0  # us

    @property
    def rabi(self) -> float:
        """Nominal Rabi frequency in rad/s."""
        return np.pi / (self.pi_time * US)


@dataclass(frozen=True)
class Pulse:
    transition: str
    theta: float
    phi: float
    duration: float  # us
    start_time: float  # us


@dataclass(frozen=True)
class VirtualZ:
    """Noiseless frame update: multiplies amplitude k by exp(i phases[k])."""

    phases: tuple[float, ...]
    start_time: float = 0.0


Item = Union[Pulse, VirtualZ]


@dataclass(frozen=True)
class PulseSequence:
    dim: int
    transitions: Mapping[str, TransitionSpec]
    items: tuple[Item, ...]
    labels: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for t in self.transitions.values():
            if not (0 <= t.lower < self.dim and 0 <= t.upper < self.dim) or t.lower == t.upper:
                raise ConfigError(f"transition {t.id} has invalid indices")
            if not t.pi_time > 0:
                raise ConfigError(f"transition {t.id} needs a positive pi-time")
        last = -np.inf
        for it in self.items:
            if isinstance(it, Pulse):
                if it.transition not in self.transitions:
                    raise ConfigError(f"unknown transition id {it.transition!r}")
                if it.start_time <= last:
                    raise ConfigError("pulse start times must be strictly increasing")
                if it.duration < 0 or it.theta < 0:
                    raise ConfigError("pulse angle and duration must be non-negative")
                last = it.start_time
            elif len(it.phases) != self.dim:
                raise ConfigError("virtual-Z phase vector has wrong length")

    @property
    def pulses(self) -> list[Pulse]:
        return [it for it in self.items if isinstance(it, Pulse)]

    @property
    def total_time(self) -> float:
        ps = self.pulses
        return ps[-1].start_time + ps[-1].duration if ps else 0.0

    @classmethod
    def build(
        cls,
        dim: int,
        transitions: Mapping[str, TransitionSpec],
        ops: Iterable[tuple[str, float, float] | VirtualZ],
        gap_us: float = 0.0,
        labels: Sequence[str] = (),
        metadata: Mapping[str, object] | None = None,
    ) -> "PulseSequence":
        """Lay out (transition, theta, phi) operations back to back.

        Negative angles become positive rotations with the phase advanced by pi;
        zero-angle operations are dropped.
        """
        if gap_us < 0:
            raise ConfigError("gap must be non-negative")
        t = 0.0
        items: list[Item] = []
        for op in ops:
            if isinstance(op, VirtualZ):
                items.append(VirtualZ(tuple(float(x) for x in op.phases), t))
                continue
            tid, theta, phi = op
            if tid not in transitions:
                raise ConfigError(f"unknown transition id {tid!r}")
            if theta < 0:
                theta, phi = -theta, phi + np.pi
            if theta == 0:
                continue
            dur = theta / np.pi * transitions[tid].pi_time
            items.append(Pulse(tid, float(theta), float(np.mod(phi, 2 * np.pi)), dur, t))
            t += dur + gap_us
        return cls(dim, dict(transitions), tuple(items), tuple(labels), dict(metadata or {}))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        items = []
        for it in self.items:
            if isinstance(it, Pulse):
                items.append({"transition": it.transition, "theta": it.theta, "phi": it.phi,
                              "duration": it.duration, "start_time": it.start_time})
            else:
                items.append({"virtual_z": list(it.phases), "start_time": it.start_time})
        return {
            "dimension": self.dim,
            "labels": list(self.labels),
            "transitions": {k: {"lower": v.lower, "upper": v.upper, "sensitivity_MHz_per_G": v.kappa,
                                "pi_time_us": v.pi_time} for k, v in self.transitions.items()},
            "pulses": items,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PulseSequence":
        allowed = {"dimension", "labels", "transitions", "pulses", "metadata", "gap_us"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown key(s) in sequence file: {sorted(unknown)}")
        try:
            dim = int(data["dimension"])
            trans = {}
            for k, v in data["transitions"].items():
                extra = set(v) - {"lower", "upper", "sensitivity_MHz_per_G", "pi_time_us"}
                if extra:
                    raise ConfigError(f"unknown key(s) in transition {k}: {sorted(extra)}")
                trans[k] = TransitionSpec(k, int(v["lower"]), int(v["upper"]),
                                          float(v.get("sensitivity_MHz_per_G", 0.0)),
                                          float(v.get("pi_time_us", 30.0)))
            raw = data["pulses"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed sequence file: {exc}") from exc
        labels = tuple(data.get("labels", ()))
        meta = dict(data.get("metadata", {}))
        if raw and all("start_time" in p for p in raw):
            items: list[Item] = []
            for p in raw:
                if "virtual_z" in p:
                    items.append(VirtualZ(tuple(float(x) for x in p["virtual_z"]), float(p["start_time"])))
                else:
                    items.append(Pulse(str(p["transition"]), float(p["theta"]), float(p["phi"]),
                                       float(p["duration"]), float(p["start_time"])))
            return cls(dim, trans, tuple(items), labels, meta)
        ops: list = []
        for p in raw:
            if "virtual_z" in p:
                ops.append(VirtualZ(tuple(float(x) for x in p["virtual_z"])))
            else:
                ops.append((str(p["transition"]), float(p["theta"]), float(p.get("phi", 0.0))))
        return cls.build(dim, trans, ops, float(data.get("gap_us", 0.0)), labels, meta)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PulseSequence":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"sequence file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"sequence file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Unitaries


def pulse_block(rabi, d_omega, phi, duration_s):
    """2x2 blocks (u00, u01, u10, u11) of exp(-iHT); arguments may be arrays."""
    rabi = np.asarray(rabi, dtype=float)
    d_omega = np.asarray(d_omega, dtype=float)
    w = np.sqrt(rabi**2 + d_omega**2)
    half = 0.5 * w * duration_s
    c, s = np.cos(half), np.sin(half)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_o = np.where(w > 0, rabi / w, 0.0)
        r_d = np.where(w > 0, d_omega / w, 0.0)
    g = np.exp(-0.5j * d_omega * duration_s)
    eip = np.exp(1j * np.asarray(phi))
    u00 = g * (c + 1j * r_d * s)
    u11 = g * (c - 1j * r_d * s)
    u01 = -1j * g * r_o * s * eip
    u10 = -1j * g * r_o * s * np.conj(eip)
    return u00, u01, u10, u11


def pulse_unitary(pulse: Pulse, d: int, d_omega: float, phi_total: float, rabi_eff: float,
                  lower: int = 0, upper: int = 1) -> np.ndarray:
    """d x d unitary of one pulse acting on (lower, upper), identity elsewhere."""
    if not rabi_eff > 0:
        raise ConfigError("effective Rabi frequency must be positive")
    duration_s = pulse.theta / rabi_eff if pulse.duration == 0 else pulse.duration * US
    u00, u01, u10, u11 = pulse_block(rabi_eff, d_omega, phi_total, duration_s)
    U = np.eye(d, dtype=complex)
    U[lower, lower], U[lower, upper], U[upper, lower], U[upper, upper] = u00, u01, u10, u11
    return U


def ideal_unitary(seq: PulseSequence) -> np.ndarray:
    """Noise-free unitary of the whole sequence."""
    U = np.eye(seq.dim, dtype=complex)
    for it in seq.items:
        if isinstance(it, VirtualZ):
            U = np.exp(1j * np.asarray(it.phases))[:, None] * U
            continue
        tr = seq.transitions[it.transition]
        U = pulse_unitary(it, seq.dim, 0.0, it.phi, tr.rabi, tr.lower, tr.upper) @ U
    return U


# ---------------------------------------------------------------------------
# Evolution


def basis_state(d: int, k: int = 0) -> np.ndarray:
    psi = np.zeros(d, dtype=complex)
    psi[k] = 1.0
    return psi


def run_sequence(seq: PulseSequence, initial: np.ndarray, realization: NoiseRealization,
                 params: NoiseParams | None = None, model: str = "paper") -> np.ndarray:
    """Evolve one shot; per-pulse detuning and phase come from the realization."""
    params = params or NoiseParams.noiseless()
    out = run_batch(seq, np.asarray(initial, dtype=complex)[None, :], [realization], params, model)
    return out[0]


def run_batch(seq: PulseSequence, initial: np.ndarray, realizations: Sequence[NoiseRealization],
              params: NoiseParams, model: str = "paper") -> np.ndarray:
    """Evolve a batch of shots (rows of ``initial``, broadcast if one row)."""
    if model not in PULSE_MODELS:
        raise ConfigError(f"unknown pulse model {model!r}")
    n = len(realizations)
    psi = np.array(np.broadcast_to(initial, (n, seq.dim)), dtype=complex)
    if psi.shape[1] != seq.dim:
        raise ConfigError("initial state has wrong dimension")
    dB = np.array([r.dB for r in realizations])
    static_hz = np.array([r.dL + r.df for r in realizations])
    scale = np.array([r.rabi_scale for r in realizations])
    for it in seq.items:
        if isinstance(it, VirtualZ):
            psi *= np.exp(1j * np.asarray(it.phases))[None, :]
            continue
        tr = seq.transitions[it.transition]
        t = it.start_time * US
        k = tr.kappa * MHZ_TO_HZ
        line_val, line_int = _line_terms(params, t)
        d_omega = 2 * np.pi * (k * (dB + line_val) + static_hz)
        d_phi = 2 * np.pi * t * (k * dB + static_hz) + 2 * np.pi * k * line_int
        if model == "phase_only":
            d_omega = np.zeros_like(d_omega)
        rabi = tr.rabi * scale
        u00, u01, u10, u11 = pulse_block(rabi, d_omega, it.phi + d_phi, it.duration * US)
        a, b = psi[:, tr.lower].copy(), psi[:, tr.upper].copy()
        psi[:, tr.lower] = u00 * a + u01 * b
        psi[:, tr.upper] = u10 * a + u11 * b
    return psi


# ---------------------------------------------------------------------------
# Monte Carlo


def wilson_interval(p: float, n: int, z: float = 1.0) -> tuple[float, float]:
    if n < 1:
        raise ConfigError("need at least one shot")
    p = min(max(float(p), 0.0), 1.0)
    den = 1 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z / den * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass(frozen=True)
class MonteCarloResult:
    populations: np.ndarray  # mean population of each basis state
    intervals: np.ndarray  # (dim, 2) Wilson 1-sigma bounds
    n_shots: int
    measured_state: int
    binomial: bool

    @property
    def mean(self) -> float:
        return float(self.populations[self.measured_state])

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = self.intervals[self.measured_state]
        return float(lo), float(hi)

    def to_dict(self) -> dict:
        return {
            "n_shots": self.n_shots,
            "measured_state": self.measured_state,
            "binomial": self.binomial,
            "mean": self.mean,
            "interval": list(self.interval),
            "populations": [float(x) for x in self.populations],
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
        }


def shot_populations(seq: PulseSequence, params: NoiseParams, n_shots: int, seed: int,
                     initial: np.ndarray | None = None, threads: int = 1,
                     model: str = "paper") -> np.ndarray:
    """(n_shots, dim) array of final populations, row k from shot index k."""
    if n_shots < 1:
        raise ConfigError("n_shots must be >= 1")
    init = basis_state(seq.dim) if initial is None else np.asarray(initial, dtype=complex)
    starts = list(range(0, n_shots, CHUNK))

    def work(s: int) -> np.ndarray:
        reals = [sample_shot(params, seed, k) for k in range(s, min(s + CHUNK, n_shots))]
        return np.abs(run_batch(seq, init, reals, params, model)) ** 2

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts, axis=0)


def monte_carlo(seq: PulseSequence, params: NoiseParams, n_shots: int, seed: int,
                measured_state: int = 0, initial: np.ndarray | None = None,
                binomial: bool = False, threads: int = 1, model: str = "paper") -> MonteCarloResult:
    """Average final populations over independent noise realizations.

    With ``binomial`` each shot is also projectively measured once and the reported
    populations are outcome frequencies.
    """
    pops = shot_populations(seq, params, n_shots, seed, initial, threads, model)
    if binomial:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D656173]))
        u = rng.random(n_shots)
        cdf = np.cumsum(pops, axis=1)
        cdf[:, -1] = np.inf
        outcome = np.argmax(cdf > u[:, None], axis=1)
        mean = np.bincount(outcome, minlength=seq.dim) / n_shots
    else:
        mean = pops.sum(axis=0) / n_shots
    ivals = np.array([wilson_interval(p, n_shots) for p in mean])
    return MonteCarloResult(mean, ivals, n_shots, measured_state, binomial)
