"""Shot-to-shot noise: distributions, the mains line signal and detuning/phase bookkeeping.

Units: magnetic quantities in gauss, frequencies in Hz, times in seconds unless a name
says otherwise.  Transition sensitivities are passed in MHz/G and converted with
``MHZ_TO_HZ``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .config import as_float, check_keys, load_toml
from .errors import ConfigError, NumericalError

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # 2.3548...
MHZ_TO_HZ = 1e6

SOURCES = ("B", "laser_gauss", "laser_lorentz", "freq", "tau_cal", "tau_drift", "line")


@dataclass(frozen=True)
class LineSignal:
    """Two-tone mains pickup on the magnetic field, in gauss."""

    A60: float = 128e-6
    phi60: float = -0.636
    A180: float = 40e-6
    phi180: float = -1.551
    f60: float = 60.0
    f180: float = 180.0

    def _tones(self):
        return ((self.A60, 2 * np.pi * self.f60, self.phi60), (self.A180, 2 * np.pi * self.f180, self.phi180))

    def value(self, t):
        return sum(a * np.sin(w * np.asarray(t) + p) for a, w, p in self._tones())

    def integral(self, t0, t1):
        """Closed-form integral of :meth:`value` over [t0, t1] (G*s)."""
        total = 0.0
        for a, w, p in self._tones():
            if a != 0.0:
                total = total - a / w * (np.cos(w * np.asarray(t1) + p) - np.cos(w * np.asarray(t0) + p))
        return total


def line_signal(t, line: LineSignal | None = None):
    """Field offset from the mains line at time t (s) after the line trigger."""
    return (line or LineSignal()).value(t)


def line_signal_phase_integral(t0, t1, line: LineSignal | None = None):
    if np.any(np.asarray(t1) < np.asarray(t0)):
        raise ConfigError("t1 must not precede t0")
    return (line or LineSignal()).integral(t0, t1)


@dataclass(frozen=True)
class NoiseParams:
    """Noise widths.  Gaussian entries are full widths at half maximum.

    ``voigt_G_Hz`` is the standard deviation of the Gaussian laser component and
    ``voigt_L_Hz`` the half width of the Lorentzian (Cauchy) component.
    """

    fwhm_B: float = 24e-6
    voigt_G_Hz: float = 81.6
    voigt_L_Hz: float = 77.1
    fwhm_f_Hz: float = 296.0
    fwhm_tau_cal: float = 0.0177
    fwhm_tau_drift: float = 0.0261
    line: LineSignal = field(default_factory=LineSignal)
    line_rezero: bool = True
    enabled: frozenset = frozenset(SOURCES)

    def __post_init__(self) -> None:
        for f in ("fwhm_B", "voigt_G_Hz", "voigt_L_Hz", "fwhm_f_Hz", "fwhm_tau_cal", "fwhm_tau_drift"):
            v = getattr(self, f)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"noise width {f} must be finite and >= 0, got {v}")
        bad = set(self.enabled) - set(SOURCES)
        if bad:
            raise ConfigError(f"unknown noise source(s): {sorted(bad)}")
        object.__setattr__(self, "enabled", frozenset(self.enabled))

    def on(self, source: str) -> bool:
        return source in self.enabled

    def only(self, *sources: str) -> "NoiseParams":
        return replace(self, enabled=frozenset(sources))

    def without(self, *sources: str) -> "NoiseParams":
        return replace(self, enabled=self.enabled - set(sources))

    @property
    def sigma_B(self) -> float:
        return self.fwhm_B / FWHM_PER_SIGMA

    @property
    def sigma_f(self) -> float:
        return self.fwhm_f_Hz / FWHM_PER_SIGMA

    @property
    def laser_voigt_fwhm_Hz(self) -> float:
        return kielkopf_fwhm(self.voigt_G_Hz * FWHM_PER_SIGMA, 2 * self.voigt_L_Hz)

    @classmethod
    def noiseless(cls) -> "NoiseParams":
        return cls(enabled=frozenset())


def kielkopf_fwhm(fwhm_gauss: float, fwhm_lorentz: float) -> float:
    """Approximate Voigt full width from its Gaussian and Lorentzian full widths."""
    return 0.5346 * fwhm_lorentz + np.sqrt(0.2166 * fwhm_lorentz**2 + fwhm_gauss**2)


PRESETS: dict[str, dict[str, Any]] = {
    "table1": {},
    # magnet-field Ramsey measurement: sigma_B = 14.4 uG
    "magnets": {"fwhm_B": 14.4e-6 * FWHM_PER_SIGMA},
    "none": {"enabled": frozenset()},
}


def preset(name: str) -> NoiseParams:
    if name not in PRESETS:
        raise ConfigError(f"unknown noise preset {name!r}; choose from {sorted(PRESETS)}")
    return NoiseParams(**PRESETS[name])


_WIDTH_KEYS = ("fwhm_B_G", "voigt_G_Hz", "voigt_L_Hz", "fwhm_f_Hz", "fwhm_tau_cal", "fwhm_tau_drift")
_LINE_KEYS = ("A60_G", "phi60_rad", "A180_G", "phi180_rad", "rezero")


def noise_from_mapping(data: Mapping[str, Any]) -> NoiseParams:
    """Build NoiseParams from a ``[noise]`` table (see INTERFACES.md)."""
    check_keys(data, ("preset",) + _WIDTH_KEYS + ("line", "enable"), "noise")
    base = preset(data.get("preset", "table1"))
    kw: dict[str, Any] = {}
    for key in _WIDTH_KEYS:
        if key in data:
            kw["fwhm_B" if key == "fwhm_B_G" else key] = as_float(data, key, "noise")
    if "line" in data:
        lt = data["line"]
        check_keys(lt, _LINE_KEYS, "noise.line")
        line = base.line
        for key, attr in (("A60_G", "A60"), ("phi60_rad", "phi60"), ("A180_G", "A180"), ("phi180_rad", "phi180")):
            if key in lt:
                line = replace(line, **{attr: as_float(lt, key, "noise.line")})
        kw["line"] = line
        if "rezero" in lt:
            kw["line_rezero"] = bool(lt["rezero"])
    if "enable" in data:
        en = data["enable"]
        check_keys(en, SOURCES, "noise.enable")
        enabled = set(base.enabled)
        for src, flag in en.items():
            if not isinstance(flag, bool):
                raise ConfigError(f"noise.enable.{src} must be true/false")
            (enabled.add if flag else enabled.discard)(src)
        kw["enabled"] = frozenset(enabled)
    return replace(base, **kw)


def load_noise(path: str | Path) -> NoiseParams:
    data = load_toml(path)
    check_keys(data, ("noise",), str(path), required=("noise",))
    return noise_from_mapping(data["noise"])


def noise_to_mapping(p: NoiseParams) -> dict[str, Any]:
    return {
        "fwhm_B_G": p.fwhm_B,
        "voigt_G_Hz": p.voigt_G_Hz,
        "voigt_L_Hz": p.voigt_L_Hz,
        "fwhm_f_Hz": p.fwhm_f_Hz,
        "fwhm_tau_cal": p.fwhm_tau_cal,
        "fwhm_tau_drift": p.fwhm_tau_drift,
        "line": {
            "A60_G": p.line.A60,
            "phi60_rad": p.line.phi60,
            "A180_G": p.line.A180,
            "phi180_rad": p.line.phi180,
            "rezero": p.line_rezero,
        },
        "enable": {s: p.on(s) for s in SOURCES},
    }


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class NoiseRealization:
    dB: float = 0.0
    dL: float = 0.0
    df: float = 0.0
    dtau_c: float = 0.0
    dtau_d: float = 0.0

    @property
    def rabi_scale(self) -> float:
        """Factor multiplying the nominal Rabi frequency."""
        return 1.0 / (1.0 + self.dtau_c + self.dtau_d)


def shot_rng(seed: int, shot_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(shot_index)]))


def sample_shot(params: NoiseParams, seed: int, shot_index: int) -> NoiseRealization:
    """One realization, reproducible from (seed, shot_index).

    The same underlying draws are used whatever sources are enabled, so switching a
    source off leaves the others' samples untouched.
    """
    rng = shot_rng(seed, shot_index)
    z = rng.standard_normal(5)
    c = rng.standard_cauchy()

    def g(src: str, scale: float, x: float) -> float:
        return float(scale * x) if params.on(src) and scale > 0 else 0.0

    dL = g("laser_gauss", params.voigt_G_Hz, z[1]) + g("laser_lorentz", params.voigt_L_Hz, c)
    return NoiseRealization(
        dB=g("B", params.sigma_B, z[0]),
        dL=dL,
        df=g("freq", params.sigma_f, z[2]),
        dtau_c=g("tau_cal", params.fwhm_tau_cal / FWHM_PER_SIGMA, z[3]),
        dtau_d=g("tau_drift", params.fwhm_tau_drift / FWHM_PER_SIGMA, z[4]),
    )


def sample_shots(params: NoiseParams, seed: int, n: int, start: int = 0) -> list[NoiseRealization]:
    return [sample_shot(params, seed, k) for k in range(start, start + n)]


# ---------------------------------------------------------------------------
# Detuning and phase bookkeeping


def _line_terms(params: NoiseParams, t):
    if not params.on("line"):
        return 0.0, 0.0
    val = params.line.value(t)
    integ = params.line.integral(0.0, t)
    if params.line_rezero:
        # shots are line-triggered and calibrated at the trigger phase
        ref = params.line.value(0.0)
        val = val - ref
        integ = integ - ref * np.asarray(t)
    return val, integ


def detuning_for(kappa: float, realization: NoiseRealization, t: float, params: NoiseParams) -> float:
    """Angular detuning (rad/s) of a transition with sensitivity ``kappa`` (MHz/G) at time t (s)."""
    line_val, _ = _line_terms(params, t)
    k = kappa * MHZ_TO_HZ
    return float(2 * np.pi * (k * (realization.dB + line_val) + realization.dL + realization.df))


def phase_offset(kappa: float, realization: NoiseRealization, t: float, params: NoiseParams) -> float:
    """Phase (rad) accumulated by the laser-atom frame up to time t (s)."""
    _, line_int = _line_terms(params, t)
    k = kappa * MHZ_TO_HZ
    static = k * realization.dB + realization.dL + realization.df
    return float(2 * np.pi * t * static + 2 * np.pi * k * line_int)


# ---------------------------------------------------------------------------
# Coherence-decay fit


@dataclass(frozen=True)
class DecayFit:
    A: float
    T_LG: float
    T_LL: float
    inv_T_LL: float
    residual_norm: float


def decay_model(t, A, T_LG, T_LL):
    inv_g = 0.0 if np.isinf(T_LG) else 1.0 / T_LG**2
    inv_l = 0.0 if np.isinf(T_LL) else 1.0 / T_LL
    t = np.asarray(t, dtype=float)
    return A * np.exp(-(t**2) * inv_g - t * inv_l)


def fit_coherence_decay(samples: Sequence[tuple[float, float]]) -> DecayFit:
    """Fit contrast(t) = A exp(-t^2/T_LG^2 - t/T_LL); t in whatever unit the caller uses."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 4 or arr.shape[1] != 2:
        raise ConfigError("need at least four (t, contrast) samples")
    t, y = arr[:, 0], arr[:, 1]
    if np.any(t < 0):
        raise ConfigError("decay times must be non-negative")
    tmax = float(np.max(t)) or 1.0
    # scaled parameters: a = tmax^2/T_LG^2, b = tmax/T_LL
    u = t / tmax

    def resid(p):
        return p[0] * np.exp(-(u**2) * p[1] - u * p[2]) - y

    pos = y > 0
    a0 = float(np.max(y)) if np.any(pos) else 1.0
    best = None
    for x0 in ([a0, 1.0, 0.0], [a0, 0.0, 1.0], [a0, 0.5, 0.5]):
        sol = least_squares(resid, x0, bounds=([0, 0, 0], [np.inf, np.inf, np.inf]),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not np.all(np.isfinite(best.x)):
        raise NumericalError("coherence-decay fit failed")
    A, a, b = best.x
    T_LG = tmax / np.sqrt(a) if a > 0 else float("inf")
    T_LL = tmax / b if b > 0 else float("inf")
    norm = float(np.linalg.norm(best.fun))
    if not best.success and norm > 1e-3 * np.sqrt(len(y)):
        raise NumericalError(f"coherence-decay fit did not converge (residual {norm:.3g})")
    return DecayFit(float(A), float(T_LG), float(T_LL), float(b / tmax), norm)


def laser_widths_from_decay(T_LG: float, T_LL: float) -> tuple[float, float]:
    """(Gaussian sigma, Lorentzian half width) in Hz for decay times in seconds.

    Uses E[cos(2 pi delta t)] = exp(-2 pi^2 sigma^2 t^2) and exp(-2 pi gamma t).
    """
    return 1.0 / (np.sqrt(2.0) * np.pi * T_LG), 1.0 / (2.0 * np.pi * T_LL)
