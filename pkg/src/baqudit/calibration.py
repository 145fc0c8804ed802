"""Ramsey frequency calibration: forward model, two-point detuning finder, error budget.

Units: frequencies in kHz, times in microseconds, so 2*pi*f*t is in radians after a
factor 1e-3.  The pulse Hamiltonians are in frequency units; U = exp(-2 pi i H t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AmbiguityError, ConfigError, NumericalError
from .noise import NoiseParams

KHZ_US = 1e-3  # kHz * us -> cycles
PHI1 = np.pi / 2
PHI2 = 3 * np.pi / 2


@dataclass(frozen=True)
class RamseyConfig:
    rabi_kHz: float = 12.5
    tau_us: float = 100.0
    t_pulse_us: float | None = None  # default: quarter Rabi period
    shots: int = 250
    T2_star_us: float = 1000.0
    window_kHz: float = 1.0

    def __post_init__(self) -> None:
        vals = [self.rabi_kHz, self.tau_us, self.shots, self.T2_star_us, self.window_kHz]
        if self.t_pulse_us is not None:
            vals.append(self.t_pulse_us)
        if not all(v > 0 for v in vals):
            raise ConfigError("Ramsey parameters must be strictly positive")

    @property
    def pulse_us(self) -> float:
        return 0.25 / self.rabi_kHz * 1e3 if self.t_pulse_us is None else self.t_pulse_us

    @property
    def wrap_free_kHz(self) -> float:
        """Detuning at which the free-precession phase reaches pi/2."""
        return 0.25 / (self.tau_us * KHZ_US)

    @property
    def search_kHz(self) -> float:
        return min(self.window_kHz, self.wrap_free_kHz)


def _expm2(h00, h01, h10, h11, t):
    """exp(-2 pi i H t) for Hermitian 2x2 H given elementwise (broadcasts)."""
    tr = 0.5 * (h00 + h11)
    dz = 0.5 * (h00 - h11)
    w = np.sqrt(dz**2 + np.abs(h01) ** 2)
    a = 2 * np.pi * t * KHZ_US
    c, s = np.cos(w * a), np.sin(w * a)
    with np.errstate(invalid="ignore", divide="ignore"):
        sw = np.where(w > 0, s / w, a)
    g = np.exp(-1j * tr * a)
    return (g * (c - 1j * dz * sw), g * (-1j * h01 * sw), g * (-1j * h10 * sw), g * (c + 1j * dz * sw))


def _apply(u, psi):
    u00, u01, u10, u11 = u
    return u00 * psi[0] + u01 * psi[1], u10 * psi[0] + u11 * psi[1]


def ramsey_evolve(cfg: RamseyConfig, f_kHz, phi) -> np.ndarray | float:
    """|<0|U3 U2 U1|0>|^2 for detuning f_kHz and analysis phase phi (broadcasts).

    U1 is a pi/2 pulse about x, U2 free precession for tau, and U3 the reverse pi/2
    rotation with phase phi, so f = 0 and phi = 0 return the full revival 1.
    """
    f = np.asarray(f_kHz, dtype=float)
    phi = np.asarray(phi, dtype=float)
    half = 0.5 * cfg.rabi_kHz
    zero = np.zeros_like(f)
    psi = (np.ones_like(f, dtype=complex), np.zeros_like(f, dtype=complex))
    psi = _apply(_expm2(zero, half + zero, half + zero, f, cfg.pulse_us), psi)
    psi = _apply(_expm2(zero, zero, zero, f, cfg.tau_us), psi)
    e = np.exp(1j * phi)
    psi = _apply(_expm2(zero, -half * np.conj(e), -half * e, f, cfg.pulse_us), psi)
    p = np.abs(psi[0]) ** 2
    return float(p) if p.ndim == 0 else p


def closed_form_dark(cfg: RamseyConfig, f_kHz, phi):
    """Short-pulse limit 1/2 + 1/2 cos(2 pi f tau + phi) exp(-tau/T2*)."""
    return 0.5 + 0.5 * np.cos(2 * np.pi * np.asarray(f_kHz) * cfg.tau_us * KHZ_US + phi) * np.exp(
        -cfg.tau_us / cfg.T2_star_us)


def model_dark(cfg: RamseyConfig, f_kHz, phi, decay: bool = True):
    """Unitary Ramsey signal with the fringe contrast reduced by exp(-tau/T2*)."""
    p = ramsey_evolve(cfg, f_kHz, phi)
    if not decay:
        return p
    return 0.5 + (p - 0.5) * np.exp(-cfg.tau_us / cfg.T2_star_us)


@dataclass(frozen=True)
class DetuningEstimate:
    f_kHz: float
    cost: float
    window_kHz: float


def detuning_cost(f_kHz, p1: float, p2: float, cfg: RamseyConfig, decay: bool = True):
    return np.abs(p1 - model_dark(cfg, f_kHz, PHI1, decay)) + np.abs(p2 - model_dark(cfg, f_kHz, PHI2, decay))


def find_detuning(p1: float, p2: float, cfg: RamseyConfig, decay: bool = True,
                  grid: int = 401) -> DetuningEstimate:
    """Minimise |p1 - m(pi/2)| + |p2 - m(3pi/2)| over the search window.

    A coarse grid locates the basin, a bounded Brent search refines it.  A minimum on
    the window edge means the phase may have wrapped; that raises AmbiguityError.
    """
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise ConfigError("probabilities must lie in [0, 1]")
    w = cfg.search_kHz
    fs = np.linspace(-w, w, grid)
    costs = detuning_cost(fs, p1, p2, cfg, decay)
    k = int(np.argmin(costs))
    step = fs[1] - fs[0]
    if k in (0, grid - 1):
        raise AmbiguityError(f"detuning minimum sits on the +/-{w:.4g} kHz window edge; phase wrap suspected")
    lo, hi = fs[k - 1], fs[k + 1]
    res = minimize_scalar(lambda f: float(detuning_cost(f, p1, p2, cfg, decay)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    if not res.success:
        raise NumericalError("detuning refinement failed")
    f = float(res.x)
    if abs(abs(f) - w) < 1e-3 * step:
        raise AmbiguityError("detuning estimate on the window edge")
    return DetuningEstimate(f, float(res.fun), w)


def detuning_uncertainty(p: float, shots: int, tau_us: float, T2_star_us: float) -> float:
    """sigma_f in Hz = sqrt(2p(1-p)/N) / (2 pi tau e^{-tau/T2*})."""
    if not 0.0 < p < 1.0:
        raise ConfigError("p must lie strictly between 0 and 1")
    if shots < 1 or tau_us <= 0 or T2_star_us <= 0:
        raise ConfigError("shots, tau and T2* must be positive")
    tau = tau_us * 1e-6
    return float(np.sqrt(2 * p * (1 - p) / shots) / (2 * np.pi * tau * np.exp(-tau_us / T2_star_us)))


def optimal_wait(p: float, shots: int, T2_star_us: float, grid=None) -> float:
    """Grid argmin of the detuning uncertainty over the wait time (us)."""
    taus = np.linspace(0.05, 5.0, 9901) * T2_star_us if grid is None else np.asarray(grid)
    vals = [detuning_uncertainty(p, shots, t, T2_star_us) for t in taus]
    return float(taus[int(np.argmin(vals))])


def slope_from_sensitivities(d_t: float, d_int: float, d_sens: float) -> float:
    """m_t = (d_t - d_int) / (d_sens - d_int)."""
    den = d_sens - d_int
    if den == 0:
        raise ConfigError("sensitive and intermediate sensitivities coincide")
    return (d_t - d_int) / den


# ---------------------------------------------------------------------------
# Synthetic triplet experiments


def laser_sampler(params: NoiseParams):
    """Per-shot laser offsets (Hz) drawn from the Gaussian and Cauchy laser widths."""

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.zeros(n)
        if params.on("laser_gauss"):
            out += params.voigt_G_Hz * rng.standard_normal(n)
        if params.on("laser_lorentz"):
            out += params.voigt_L_Hz * rng.standard_cauchy(n)
        if params.on("freq"):
            out += params.sigma_f * rng.standard_normal(n)
        return out

    return draw


def measure_detuning(cfg: RamseyConfig, f_true_kHz: float, rng: np.random.Generator,
                     shot_noise_kHz: np.ndarray | None = None) -> float:
    """One two-phase Ramsey measurement with binomial readout.

    ``shot_noise_kHz`` holds an extra frequency offset per shot (length 2*shots: the
    first half at pi/2, the second at 3pi/2), modelling shot-to-shot noise.
    """
    n = cfg.shots
    extra = np.zeros(2 * n) if shot_noise_kHz is None else np.asarray(shot_noise_kHz)
    f = f_true_kHz + extra
    p1 = np.clip(model_dark(cfg, f[:n], PHI1), 0, 1)
    p2 = np.clip(model_dark(cfg, f[n:], PHI2), 0, 1)
    k1 = rng.binomial(1, p1).mean()
    k2 = rng.binomial(1, p2).mean()
    return find_detuning(float(k1), float(k2), cfg).f_kHz


@dataclass(frozen=True)
class TripletResult:
    x_kHz: np.ndarray  # f_sens - f_int
    y_kHz: np.ndarray  # f_t - f_int
    slope: float
    intercept: float
    slope_expected: float
    residual_sigma_Hz: float


def simulate_triplets(
    kappa_int: float,
    kappa_sens: float,
    kappa_t: float,
    cfg: RamseyConfig,
    n_triplets: int,
    seed: int,
    field_spread_G: float = 5e-5,
    sigma_B_G: float = 24e-6 / 2.3548,
    laser_sampler=None,
) -> TripletResult:
    """Simulate repeated (f_int, f_sens, f_t) triplets and the linear-fit residuals.

    The field drifts between triplets with standard deviation ``field_spread_G`` and
    fluctuates shot to shot with ``sigma_B_G``; ``laser_sampler(rng, n)`` returns
    per-shot laser offsets in Hz.  Each transition's laser sits at the nominal
    frequency, so the measured detuning is kappa times the field offset.
    """
    rng = np.random.default_rng(seed)
    n = 2 * cfg.shots
    xs, ys = [], []
    for _ in range(n_triplets):
        drift = rng.normal(0.0, field_spread_G)
        meas = []
        for kappa in (kappa_int, kappa_sens, kappa_t):
            shot_b = rng.normal(0.0, sigma_B_G, n) if sigma_B_G > 0 else np.zeros(n)
            noise = kappa * 1e3 * shot_b
            if laser_sampler is not None:
                noise = noise + laser_sampler(rng, n) * 1e-3
            meas.append(measure_detuning(cfg, kappa * 1e3 * drift, rng, noise))
        xs.append(meas[1] - meas[0])
        ys.append(meas[2] - meas[0])
    x, y = np.array(xs), np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    # robust width: median absolute deviation scaled to a Gaussian sigma
    mad = np.median(np.abs(resid - np.median(resid))) * 1.482602218505602
    return TripletResult(x, y, float(slope), float(intercept),
                         slope_from_sensitivities(kappa_t, kappa_int, kappa_sens), float(mad * 1e3))
