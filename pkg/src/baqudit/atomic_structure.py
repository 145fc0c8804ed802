"""Hyperfine + Zeeman level structure of the S1/2 and D5/2 manifolds of 137Ba+.

Energies are in MHz, fields in gauss.  Levels carry adiabatic |F, m_F> labels
obtained by following each zero-field eigenvector up to the requested field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .angular import clebsch_gordan
from .config import as_float, check_keys, load_packaged_toml, load_toml
from .errors import ConfigError, NumericalError, TrackingError

#: zero-field shift of S1/2 F=2 relative to the hyperfine centroid (MHz)
S12_F2_SHIFT_MHZ = 3014.153159
FD_STEP_G = 1e-4
TRACK_STEPS = 100

_MANIFOLD_KEYS = ("I", "J", "A", "B_Q", "C_O", "g_J", "citation")
_PHYSICAL_KEYS = (
    "bohr_magneton_MHz_per_G",
    "proton_electron_mass_ratio",
    "g_I_in_electron_over_proton_mass",
    "citation",
)


@dataclass(frozen=True)
class AtomicConstants:
    manifold: str
    I: float
    J: float
    A: float
    B_Q: float
    C_O: float
    g_J: float
    g_I: float
    mu_B: float = 1.39962449361
    citation: str = ""

    def __post_init__(self) -> None:
        for name in ("I", "J"):
            val = getattr(self, name)
            if val <= 0 or abs(2 * val - round(2 * val)) > 1e-12:
                raise ConfigError(f"{self.manifold}: {name}={val} is not a positive half-integer")
        # quadrupole/octupole terms need I, J > 1/2 and I, J > 1 respectively
        if self.J <= 0.5 or self.I <= 0.5:
            object.__setattr__(self, "B_Q", 0.0)
        if self.J <= 1.0 or self.I <= 1.0:
            object.__setattr__(self, "C_O", 0.0)

    @property
    def short(self) -> str:
        return self.manifold[0]

    @property
    def dim(self) -> int:
        return int(round((2 * self.I + 1) * (2 * self.J + 1)))


def parse_constants(data: Mapping) -> dict[str, AtomicConstants]:
    """Validate a constants mapping (same layout as the shipped TOML file)."""
    check_keys(data, ("physical", "manifolds"), "constants", required=("physical", "manifolds"))
    phys = data["physical"]
    check_keys(phys, _PHYSICAL_KEYS, "physical", required=_PHYSICAL_KEYS[:3] + ("citation",))
    if not str(phys["citation"]).strip():
        raise ConfigError("physical.citation must not be empty")
    mu_B = as_float(phys, "bohr_magneton_MHz_per_G", "physical")
    g_I = as_float(phys, "g_I_in_electron_over_proton_mass", "physical") / as_float(
        phys, "proton_electron_mass_ratio", "physical"
    )
    out = {}
    for name, table in data["manifolds"].items():
        where = f"manifolds.{name}"
        check_keys(table, _MANIFOLD_KEYS, where, required=_MANIFOLD_KEYS)
        if not str(table["citation"]).strip():
            raise ConfigError(f"{where}.citation must not be empty")
        out[name] = AtomicConstants(
            manifold=name,
            I=as_float(table, "I", where),
            J=as_float(table, "J", where),
            A=as_float(table, "A", where),
            B_Q=as_float(table, "B_Q", where),
            C_O=as_float(table, "C_O", where),
            g_J=as_float(table, "g_J", where),
            g_I=g_I,
            mu_B=mu_B,
            citation=str(table["citation"]),
        )
    for needed in ("S12", "D52"):
        if needed not in out:
            raise ConfigError(f"constants file lacks manifold {needed}")
    return out


def load_constants(path: str | Path | None = None) -> dict[str, AtomicConstants]:
    data = load_packaged_toml("constants.toml") if path is None else load_toml(path)
    return parse_constants(data)


@lru_cache(maxsize=1)
def default_constants() -> tuple[AtomicConstants, AtomicConstants]:
    c = load_constants()
    return c["S12"], c["D52"]


# ---------------------------------------------------------------------------
# Hamiltonian


def spin_matrices(j: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(J_z, J_+, J_-) in the |j, m> basis ordered m = j, j-1, ..., -j."""
    m = np.arange(j, -j - 1e-9, -1.0)
    jz = np.diag(m)
    jp = np.zeros((m.size, m.size))
    for k in range(1, m.size):
        jp[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return jz, jp, jp.T.copy()


def product_basis(I: float, J: float) -> list[tuple[float, float]]:
    """(m_I, m_J) pairs in the Kronecker order used by :func:`build_hamiltonian`."""
    mI = np.arange(I, -I - 1e-9, -1.0)
    mJ = np.arange(J, -J - 1e-9, -1.0)
    return [(float(a), float(b)) for a in mI for b in mJ]


def _operators(c: AtomicConstants):
    Iz, Ip, Im = spin_matrices(c.I)
    Jz, Jp, Jm = spin_matrices(c.J)
    eI, eJ = np.eye(Iz.shape[0]), np.eye(Jz.shape[0])
    IJ = np.kron(Iz, Jz) + 0.5 * (np.kron(Ip, Jm) + np.kron(Im, Jp))
    Fz = np.kron(Iz, eJ) + np.kron(eI, Jz)
    Fp = np.kron(Ip, eJ) + np.kron(eI, Jp)
    F2 = Fz @ Fz + 0.5 * (Fp @ Fp.T + Fp.T @ Fp)
    dHdB = c.mu_B * (c.g_J * np.kron(eI, Jz) + c.g_I * np.kron(Iz, eJ))
    return IJ, Fz, F2, dHdB


def hyperfine_hamiltonian(c: AtomicConstants) -> np.ndarray:
    IJ, _, _, _ = _operators(c)
    I, J = c.I, c.J
    E = np.eye(IJ.shape[0])
    ii, jj = I * (I + 1), J * (J + 1)
    h = c.A * IJ
    den_q = 2 * I * (2 * I - 1) * J * (2 * J - 1)
    if c.B_Q != 0.0 and den_q != 0.0:
        h = h + c.B_Q * (3 * IJ @ IJ + 1.5 * IJ - ii * jj * E) / den_q
    den_o = I * (I - 1) * (2 * I - 1) * J * (J - 1) * (2 * J - 1)
    if c.C_O != 0.0 and den_o != 0.0:
        IJ2 = IJ @ IJ
        h = h + c.C_O * (10 * IJ2 @ IJ + 20 * IJ2 - 5 * ii * jj * E) / den_o
        h = h + c.C_O * 2 * IJ * (ii + jj + 3 - 3 * ii * jj) / den_o
    return h


def build_hamiltonian(constants: AtomicConstants, B: float) -> np.ndarray:
    """H_HF + H_Z over the |m_I, m_J> product basis, in MHz."""
    if B < 0:
        raise ConfigError(f"field must be non-negative, got {B}")
    _, _, _, dHdB = _operators(constants)
    return hyperfine_hamiltonian(constants) + B * dHdB


# ---------------------------------------------------------------------------
# Levels


@dataclass(frozen=True)
class EigenLevel:
    manifold: str
    F: int
    m: int
    energy: float
    dEdB: float
    amplitudes: np.ndarray = field(repr=False, compare=False)

    @property
    def label(self) -> str:
        return f"{self.manifold[0]}({self.F},{self.m})"


def _m_blocks(c: AtomicConstants) -> dict[float, np.ndarray]:
    basis = product_basis(c.I, c.J)
    tot = np.array([a + b for a, b in basis])
    return {float(m): np.flatnonzero(np.isclose(tot, m)) for m in np.unique(tot)}


def _fix_phase(v: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude component real and positive
    out = v.copy()
    for k in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, k])))
        out[:, k] *= np.sign(out[i, k]) or 1.0
    return out


def _assign(prev: np.ndarray, new: np.ndarray, who: Sequence[str]) -> np.ndarray:
    ov = np.abs(prev.T @ new)
    order = np.empty(ov.shape[0], dtype=int)
    taken: set[int] = set()
    for r in range(ov.shape[0]):
        cand = [c for c in np.argsort(-ov[r], kind="stable") if c not in taken]
        best = cand[0]
        if ov[r, best] < 0.5:
            raise TrackingError(f"lost track of level {who[r]} (overlap {ov[r, best]:.3f})")
        taken.add(best)
        order[r] = best
    return new[:, order]


@lru_cache(maxsize=64)
def solve_manifold(constants: AtomicConstants, B: float, steps: int = TRACK_STEPS) -> tuple[EigenLevel, ...]:
    """Eigenlevels sorted by m then energy, with adiabatic (F, m) labels."""
    if B < 0:
        raise ConfigError(f"field must be non-negative, got {B}")
    hhf = hyperfine_hamiltonian(constants)
    _, _, F2, dHdB = _operators(constants)
    shift = np.trace(hhf) / hhf.shape[0]
    levels = []
    for m, idx in _m_blocks(constants).items():
        h0 = hhf[np.ix_(idx, idx)]
        zb = dHdB[np.ix_(idx, idx)]
        _, vec = np.linalg.eigh(h0)
        vec = _fix_phase(vec)
        f2 = np.einsum("ik,ij,jk->k", vec, F2[np.ix_(idx, idx)], vec)
        Fs = [int(round((-1 + np.sqrt(1 + 4 * x)) / 2)) for x in f2]
        names = [f"{constants.short}({F},{m:+g})" for F in Fs]
        if B > 0:
            for b in np.linspace(0.0, B, steps + 1)[1:]:
                _, new = np.linalg.eigh(h0 + b * zb)
                vec = _assign(vec, _fix_phase(new), names)
        hb = h0 + B * zb
        energy = np.einsum("ik,ij,jk->k", vec, hb, vec) - shift
        slope = np.einsum("ik,ij,jk->k", vec, zb, vec)
        # central finite-difference cross-check of the Hellmann-Feynman slopes
        e_hi = np.linalg.eigvalsh(h0 + (B + FD_STEP_G) * zb)
        e_lo = np.linalg.eigvalsh(h0 + (B - FD_STEP_G) * zb)
        fd = (e_hi - e_lo) / (2 * FD_STEP_G)
        hf_sorted = slope[np.argsort(energy, kind="stable")]
        if np.max(np.abs(fd - hf_sorted)) > 1e-6:
            raise NumericalError(f"dE/dB cross-check failed in block m={m:g}")
        for k in range(len(Fs)):
            amp = np.zeros(hhf.shape[0])
            amp[idx] = vec[:, k]
            amp.setflags(write=False)
            levels.append(
                EigenLevel(constants.manifold, Fs[k], int(round(m)), float(energy[k]), float(slope[k]), amp)
            )
    levels.sort(key=lambda lv: (lv.m, lv.energy))
    return tuple(levels)


def finite_difference_slopes(constants: AtomicConstants, B: float, dB: float = FD_STEP_G) -> dict[str, float]:
    """dE/dB by central difference of the tracked energies, keyed by label."""
    hi = {lv.label: lv.energy for lv in solve_manifold(constants, B + dB)}
    lo = {lv.label: lv.energy for lv in solve_manifold(constants, max(B - dB, 0.0))}
    width = dB + min(dB, B)
    return {k: (hi[k] - lo[k]) / width for k in hi}


# ---------------------------------------------------------------------------
# Transitions


@dataclass(frozen=True)
class Transition:
    lower: EigenLevel
    upper: EigenLevel
    frequency: float
    sensitivity: float
    delta_m: int
    amplitude: float = float("nan")
    rel_strength: float = float("nan")
    pi_time: float = float("nan")

    @property
    def id(self) -> str:
        return f"{self.lower.label}-{self.upper.label}"


def _resolve(constants: Sequence[AtomicConstants] | None) -> tuple[AtomicConstants, AtomicConstants]:
    if constants is None:
        return default_constants()
    s, d = constants
    return s, d


def quadrupole_amplitude(s_const: AtomicConstants, d_const: AtomicConstants, lower: EigenLevel,
                         upper: EigenLevel, weights: Mapping[int, float]) -> float:
    q = upper.m - lower.m
    if abs(q) > 2:
        return 0.0
    bs = product_basis(s_const.I, s_const.J)
    bd = {pair: k for k, pair in enumerate(product_basis(d_const.I, d_const.J))}
    total = 0.0
    for ks, (mI, mJ) in enumerate(bs):
        cs = lower.amplitudes[ks]
        if cs == 0.0:
            continue
        kd = bd.get((mI, mJ + q))
        if kd is None:
            continue
        cd = upper.amplitudes[kd]
        if cd == 0.0:
            continue
        total += np.conj(cd) * cs * clebsch_gordan(s_const.J, mJ, 2, q, d_const.J, mJ + q)
    return float(abs(total * weights.get(q, 1.0)))


def transition_table(
    B: float,
    constants: Sequence[AtomicConstants] | None = None,
    offset: float = S12_F2_SHIFT_MHZ,
    lower_F: Iterable[int] = (2,),
) -> list[Transition]:
    """Quadrupole-allowed S1/2 <-> D5/2 links, frequencies in MHz and slopes in MHz/G.

    Only lower levels whose F is in ``lower_F`` are used (the F=2 hub states by default).
    """
    s_const, d_const = _resolve(constants)
    lows = [lv for lv in solve_manifold(s_const, B) if lv.F in set(lower_F)]
    ups = solve_manifold(d_const, B)
    out = []
    for lo in lows:
        for up in ups:
            dm = up.m - lo.m
            if abs(dm) > 2:
                continue
            out.append(Transition(lo, up, up.energy - lo.energy + offset, up.dEdB - lo.dEdB, dm))
    return out


def relative_strengths(
    transitions: Sequence[Transition],
    constants: Sequence[AtomicConstants] | None = None,
    geometry_weights: Mapping[int, float] | None = None,
    references: Mapping[int, str] | None = None,
    reference_pi_time_us: float | Mapping[int, float] = 30.0,
) -> list[Transition]:
    """Attach quadrupole amplitudes, per-Delta-m relative strengths and pi-times.

    ``references`` maps Delta-m to the id of its reference transition; by default the
    strongest transition of each class is used.  ``reference_pi_time_us`` is the pi-time
    of each reference transition.
    """
    s_const, d_const = _resolve(constants)
    weights = {q: 1.0 for q in range(-2, 3)}
    if geometry_weights:
        weights.update({int(k): float(v) for k, v in geometry_weights.items()})
    amps = [quadrupole_amplitude(s_const, d_const, t.lower, t.upper, weights) for t in transitions]
    classes = sorted({t.delta_m for t in transitions})
    ref_amp = {}
    for dm in classes:
        members = [(a, t) for a, t in zip(amps, transitions) if t.delta_m == dm]
        if references and dm in references:
            hit = [a for a, t in members if t.id == references[dm]]
            if not hit:
                raise ConfigError(f"reference transition {references[dm]!r} not found for delta_m={dm}")
            ref_amp[dm] = hit[0]
        elif references:
            raise ConfigError(f"no reference transition given for delta_m={dm}")
        else:
            ref_amp[dm] = max(a for a, _ in members)
        if ref_amp[dm] <= 0:
            raise ConfigError(f"reference transition for delta_m={dm} has zero strength")
    out = []
    for a, t in zip(amps, transitions):
        rel = a / ref_amp[t.delta_m]
        tau_ref = (
            reference_pi_time_us[t.delta_m]
            if isinstance(reference_pi_time_us, Mapping)
            else float(reference_pi_time_us)
        )
        pi_time = tau_ref / rel if rel > 0 else float("inf")
        out.append(replace(t, amplitude=a, rel_strength=rel, pi_time=pi_time))
    return out


def build_transitions(
    B: float,
    constants: Sequence[AtomicConstants] | None = None,
    offset: float = S12_F2_SHIFT_MHZ,
    geometry_weights: Mapping[int, float] | None = None,
    references: Mapping[int, str] | None = None,
    reference_pi_time_us: float | Mapping[int, float] = 30.0,
) -> list[Transition]:
    """Transition table with strengths and pi-times filled in."""
    table = transition_table(B, constants, offset)
    return relative_strengths(table, constants, geometry_weights, references, reference_pi_time_us)


@dataclass(frozen=True)
class SpectralLine:
    frequency: float
    strength: float
    carrier: str
    kind: str  # "carrier" or "<axis><sign>", e.g. "x+"


def sideband_augmented_table(
    transitions: Sequence[Transition],
    secular_freqs: tuple[float, float, float],
    eta: float,
    nbar: float,
) -> list[SpectralLine]:
    """Carriers plus first-order red/blue sidebands on each motional axis.

    Sideband Rabi amplitudes use the thermal estimate eta*sqrt(nbar) times the carrier.
    """
    if eta < 0 or nbar < 0:
        raise ConfigError("eta and nbar must be non-negative")
    ratio = eta * np.sqrt(nbar)
    lines = []
    for t in transitions:
        lines.append(SpectralLine(t.frequency, t.rel_strength, t.id, "carrier"))
        for axis, nu in zip("xyz", secular_freqs):
            for sign, tag in ((1, "+"), (-1, "-")):
                lines.append(SpectralLine(t.frequency + sign * nu, ratio * t.rel_strength, t.id, axis + tag))
    return lines


def find_transition(transitions: Sequence[Transition], lower: str, upper: str) -> Transition:
    for t in transitions:
        if t.lower.label == lower and t.upper.label == upper:
            return t
    raise ConfigError(f"no allowed transition {lower} <-> {upper}")
