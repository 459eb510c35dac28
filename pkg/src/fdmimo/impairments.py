"""Multiplicative-noise models for RF chains.

Covers per-chain phase and magnitude error sampling, local-oscillator phase
drift under the Wiener (frequency-domain) and Allan-deviation (time-domain)
views, a comparison of LO distribution architectures, and temperature-driven
drift of transmit/receive responses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidConfigurationError, InvalidInputError, OutOfModelError

__all__ = [
    "LoOscillatorParams",
    "ImpairmentState",
    "TemperatureModel",
    "TemperatureTrace",
    "integrated_phase_noise_variance",
    "integrated_phase_noise_from_psd",
    "wiener_phase_error_variance",
    "allan_phase_error_variance",
    "required_allan_deviation",
    "sample_phase_errors",
    "magnitude_error_std",
    "sample_magnitude_errors",
    "amplitude_factors",
    "coherence_factor",
    "temperature_drift",
    "generate_temperature_trace",
    "lo_architecture_rms_error",
    "ARCHITECTURES",
    "MAGNITUDE_MODELS",
]

ARCHITECTURES = ("SLO", "PLL", "CLO", "BDS")
# "floored": std 10**(rms/10) - 1, amplitude 1 + e floored at 0.
# "squared": std 10**(rms**2/10) - 1, amplitude 1 + e kept signed.
MAGNITUDE_MODELS = ("floored", "squared")

# Flicker-PM / white-FM region of a TCXO, where adev(tau)*tau is constant.
ALLAN_REGION = (100e-6, 1.0)


@dataclass(frozen=True)
class LoOscillatorParams:
    """Oscillator description used by the LO drift models.

    ``integrated_pn_dbc`` is the phase noise integrated over
    ``[f_low, f_high]``; ``adev`` is the Allan deviation at ``gating_period``.
    """

    fc: float = 2e9
    integrated_pn_dbc: float = -40.0
    f_low: float = 15e3
    f_high: float = 10e6
    adev: float = 1e-9
    gating_period: float = 1.0
    sample_time: float = 1.0 / 30.72e6
    architecture: str = "SLO"
    pll_max_deg: float = 20.0
    pll_ramp_s: float = 1800.0
    clo_deg: float = 1.0
    bds_deg: float = 1.3

    def __post_init__(self):
        if not self.f_low < self.f_high:
            raise InvalidConfigurationError("integration band needs f_low < f_high")
        if not self.adev > 0:
            raise InvalidConfigurationError("Allan deviation must be positive")
        if self.integrated_pn_dbc > 0:
            raise InvalidConfigurationError("integrated phase noise must be <= 0 dBc")
        if self.architecture not in ARCHITECTURES:
            raise InvalidConfigurationError(f"unknown LO architecture {self.architecture!r}")

    @property
    def phase_noise_constant(self) -> float:
        """Free-running oscillator constant ``c`` implied by the integrated noise."""
        s2 = integrated_phase_noise_variance(self.integrated_pn_dbc)
        return s2 / (4 * math.pi**2 * self.fc**2 * self.sample_time)


@dataclass
class ImpairmentState:
    """Per-chain error state at one instant."""

    phase_deg: np.ndarray
    gain_db: np.ndarray
    temperature_c: np.ndarray | None = None
    timestamp_s: float = 0.0

    def __post_init__(self):
        self.phase_deg = np.asarray(self.phase_deg, dtype=float)
        self.gain_db = np.asarray(self.gain_db, dtype=float)
        if self.phase_deg.shape != self.gain_db.shape:
            raise InvalidInputError("phase and gain arrays must have one entry per chain")
        if not (np.all(np.isfinite(self.phase_deg)) and np.all(np.isfinite(self.gain_db))):
            raise InvalidInputError("impairment state must be finite")

    @property
    def n_chains(self) -> int:
        return self.phase_deg.size

    def complex_gains(self) -> np.ndarray:
        return 10 ** (self.gain_db / 20) * np.exp(1j * np.deg2rad(self.phase_deg))


@dataclass(frozen=True)
class TemperatureModel:
    """Linear temperature coefficients plus parameters of the synthetic trace.

    Slopes are per degree Celsius. Defaults: transmit phase +20 deg and gain
    -2 dB per 20 C; receive phase +29 deg per 90 C and gain -2 dB per 60 C.
    """

    tx_phase_slope: float = 1.0
    tx_gain_slope: float = -0.1
    rx_phase_slope: float = 29.0 / 90.0
    rx_gain_slope: float = -2.0 / 60.0
    mean_c: float = 45.0
    diurnal_amplitude_c: float = 12.0
    wander_c: float = 1.5
    chain_spread_c: float = 4.0
    sample_interval_s: float = 180.0
    pair_bound_c: float = 11.0
    reference_bound_c: float = 9.0

    def slopes(self, path: str) -> tuple[float, float]:
        if path == "tx":
            return self.tx_phase_slope, self.tx_gain_slope
        if path == "rx":
            return self.rx_phase_slope, self.rx_gain_slope
        raise InvalidInputError(f"path must be 'tx' or 'rx', got {path!r}")


@dataclass
class TemperatureTrace:
    times_s: np.ndarray
    temps_c: np.ndarray          # (n_samples, n_chains)
    common_c: np.ndarray = field(default=None)

    @property
    def n_chains(self) -> int:
        return self.temps_c.shape[1]

    def relative(self, reference: int = 0) -> np.ndarray:
        return self.temps_c - self.temps_c[:, [reference]]

    def at(self, t: float) -> np.ndarray:
        """Sample-and-hold lookup of all chain temperatures at time ``t``."""
        k = int(np.searchsorted(self.times_s, t, side="right")) - 1
        return self.temps_c[max(k, 0)]


def integrated_phase_noise_variance(level_dbc: float) -> float:
    """Integrated phase-error variance (rad^2) for a level in dBc."""
    if level_dbc > 0:
        raise InvalidInputError("integrated phase noise must be <= 0 dBc")
    return 10.0 ** (level_dbc / 10.0)


def integrated_phase_noise_from_psd(freqs_hz, psd_dbc_hz, f_low=15e3, f_high=10e6) -> float:
    """Twice the integral of a one-sided phase-noise spectrum over a band.

    The spectrum is interpolated log-log between the given points.
    """
    f = np.asarray(freqs_hz, dtype=float)
    p = np.asarray(psd_dbc_hz, dtype=float)
    grid = np.geomspace(f_low, f_high, 4001)
    psd = 10 ** (np.interp(np.log10(grid), np.log10(f), p) / 10)
    return 2.0 * float(np.trapezoid(psd, grid))


def wiener_phase_error_variance(sigma2_ts: float, tau: float, ts: float) -> float:
    """Phase-error variance after ``tau`` seconds of a Wiener phase process.

    ``sigma2_ts`` is the per-sample variance and ``tau/ts`` the number of
    elapsed samples.
    """
    if tau < 0 or not ts > 0:
        raise InvalidInputError("need tau >= 0 and ts > 0")
    return sigma2_ts * (tau / ts)


def allan_phase_error_variance(fc: float, adev: float, tau: float,
                               gating_period: float = 1.0) -> float:
    """Mean-square LO phase error (rad^2) from an Allan deviation.

    Inside the flicker-PM / white-FM region the product ``adev*tau`` is
    constant, so the variance is ``4*pi^2*fc^2*(adev*gating_period)^2``
    regardless of ``tau``.
    """
    lo, hi = ALLAN_REGION
    if not lo <= tau <= hi:
        raise OutOfModelError(
            f"elapsed time {tau:g} s is outside the modeled region [{lo:g}, {hi:g}] s")
    return 4 * math.pi**2 * fc**2 * (adev * gating_period) ** 2


def required_allan_deviation(fc: float, target_rms_deg: float,
                             gating_period: float = 1.0) -> float:
    """Allan deviation that yields ``target_rms_deg`` of LO phase error."""
    if not target_rms_deg > 0:
        raise InvalidInputError("target RMS phase error must be positive")
    return math.radians(target_rms_deg) / (2 * math.pi * fc * gating_period)


def sample_phase_errors(rms_deg: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. zero-mean Gaussian phase offsets in degrees."""
    if rms_deg < 0 or n < 1:
        raise InvalidInputError("need rms >= 0 and n >= 1")
    return rms_deg * rng.standard_normal(n)


def _check_model(model: str):
    if model not in MAGNITUDE_MODELS:
        raise InvalidConfigurationError(f"magnitude model must be one of {MAGNITUDE_MODELS}, got {model!r}")


def magnitude_error_std(rms_db: float, model: str = "floored") -> float:
    """Standard deviation of the additive linear amplitude error.

    ``10**(rms_db/10) - 1`` for the ``"floored"`` model and
    ``10**(rms_db**2/10) - 1`` for the ``"squared"`` model; both agree at 0
    and 1 dB.
    """
    _check_model(model)
    if not 0 <= rms_db <= 9:
        raise OutOfModelError("RMS magnitude error must lie in [0, 9] dB")
    exponent = rms_db if model == "floored" else rms_db * rms_db
    return 10.0 ** (exponent / 10.0) - 1.0


def sample_magnitude_errors(rms_db: float, n: int, rng: np.random.Generator,
                            model: str = "floored") -> np.ndarray:
    """Additive zero-mean Gaussian deviations of the linear amplitude.

    Apply with :func:`amplitude_factors`.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    return magnitude_error_std(rms_db, model) * rng.standard_normal(n)


def amplitude_factors(deviations, model: str = "floored") -> np.ndarray:
    """``1 + deviation``, floored at 0 unless ``model == "squared"``.

    A negative factor under the signed model flips the chain's polarity.
    """
    _check_model(model)
    a = 1.0 + np.asarray(deviations, dtype=float)
    return np.maximum(0.0, a) if model == "floored" else a


def coherence_factor(rms_phase_deg: float = 0.0, rms_mag_db: float = 0.0,
                     model: str = "floored") -> float:
    """``|E g|^2 / E|g|^2`` for the per-chain complex gain ``g``.

    ``g = a * exp(j*eps)`` with ``eps ~ N(0, sigma^2)`` and ``a`` the
    amplitude factor of the chosen magnitude model. This is the fraction of
    a beam's power that stays coherent under the errors.
    """
    sigma = math.radians(rms_phase_deg)
    s = magnitude_error_std(rms_mag_db, model)
    if s == 0:
        mag = 1.0
    elif model == "squared":
        mag = 1.0 / (1.0 + s * s)
    else:
        c = 1.0 / s
        ea = stats.norm.cdf(c) + s * stats.norm.pdf(c)
        ea2 = (1 + s * s) * stats.norm.cdf(c) + s * stats.norm.pdf(c)
        mag = ea * ea / ea2
    return math.exp(-sigma * sigma) * mag


def temperature_drift(delta_t, path: str, model: TemperatureModel = TemperatureModel()):
    """Phase (deg) and gain (dB) change of a chain after ``delta_t`` C."""
    ph, g = model.slopes(path)
    delta_t = np.asarray(delta_t, dtype=float)
    out = (ph * delta_t, g * delta_t)
    if out[0].ndim == 0:
        return float(out[0]), float(out[1])
    return out


def _ou_path(rng, n_steps, n_paths, dt, tau_c, std):
    a = math.exp(-dt / tau_c)
    x = np.empty((n_steps, n_paths))
    x[0] = std * rng.standard_normal(n_paths)
    noise = std * math.sqrt(1 - a * a) * rng.standard_normal((n_steps - 1, n_paths))
    for k in range(1, n_steps):
        x[k] = a * x[k - 1] + noise[k - 1]
    return x


def generate_temperature_trace(model: TemperatureModel, duration_s: float, n_chains: int,
                               rng: np.random.Generator) -> TemperatureTrace:
    """Synthetic per-chain internal temperatures sampled every ``sample_interval_s``.

    Chains share a diurnal common trend. Each chain adds a static offset, a
    diurnal term of its own amplitude (uneven solar loading) and a slow
    Ornstein-Uhlenbeck wander; the per-chain part is soft-limited so that any
    two chains differ by at most ``pair_bound_c`` and every chain stays within
    ``reference_bound_c`` of chain 0.
    """
    if n_chains < 1:
        raise InvalidInputError("n_chains must be >= 1")
    dt = model.sample_interval_s
    n = int(math.floor(duration_s / dt)) + 1
    t = np.arange(n) * dt
    day = 2 * math.pi * t / 86400.0
    phase0 = rng.uniform(0, 2 * math.pi)
    diurnal = np.sin(day + phase0)
    wander = _ou_path(rng, n, 1, dt, 4 * 3600.0, 1.0)[:, 0]
    wander = model.wander_c * np.tanh(wander / 2.0)
    common = model.mean_c + model.diurnal_amplitude_c * diurnal + wander

    if n_chains == 1:
        return TemperatureTrace(t, common[:, None].copy(), common)

    spread = model.chain_spread_c
    offset = rng.normal(0, spread / 2, n_chains)
    amp = rng.uniform(-spread, spread, n_chains)
    ou = _ou_path(rng, n, n_chains, dt, 2 * 3600.0, spread / 3)
    raw = offset + amp * diurnal[:, None] + ou
    lim = np.full(n_chains, model.pair_bound_c / 2)
    lim[0] = model.reference_bound_c - model.pair_bound_c / 2
    rel = lim * np.tanh(raw / lim)
    temps = common[:, None] + rel
    return TemperatureTrace(t, temps, common)


def lo_architecture_rms_error(arch: str, elapsed_s: float,
                              params: LoOscillatorParams = LoOscillatorParams()) -> float:
    """RMS relative LO phase error (deg) after ``elapsed_s`` for an architecture.

    ``SLO`` follows the Allan-deviation model, ``PLL`` ramps linearly to its
    ceiling over ``pll_ramp_s``, ``CLO`` and ``BDS`` are constant.
    """
    if not elapsed_s > 0:
        raise InvalidInputError("elapsed time must be positive")
    if arch == "SLO":
        var = allan_phase_error_variance(params.fc, params.adev, elapsed_s, params.gating_period)
        return math.degrees(math.sqrt(var))
    if arch == "PLL":
        return min(params.pll_max_deg, params.pll_max_deg * elapsed_s / params.pll_ramp_s)
    if arch == "CLO":
        return params.clo_deg
    if arch == "BDS":
        return params.bds_deg
    raise InvalidConfigurationError(f"unknown LO architecture {arch!r}")
