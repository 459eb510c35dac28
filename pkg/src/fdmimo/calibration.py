"""Relative (reciprocity) and absolute (phase-center) array calibration.

Relative calibration scales uplink CSI by ``c_i = t_i r_ref / (r_i t_ref)``
so that it matches the downlink channel up to one common complex scalar.
Absolute calibration restores every chain to a stored baseline measured
against a stable array phase center. The scheduler decides when each chain
is recalibrated from its temperature history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array import ArrayConfig, array_factor
from .errors import InvalidInputError, NotInitializedError, ZeroResponseError
from .impairments import TemperatureModel, TemperatureTrace, temperature_drift

__all__ = [
    "RfChainResponse",
    "CalibrationState",
    "CalibrationSchedule",
    "wrap_phase",
    "relative_coefficients",
    "apply_relative_calibration_to_csi",
    "absolute_calibrate",
    "calibration_scheduler",
    "drift_since_calibration",
    "worst_pairwise_error",
    "residual_error_metrics",
    "pattern_with_muted_chain",
]


def wrap_phase(deg):
    """Wrap degrees into (-180, 180]."""
    w = -((-np.asarray(deg, dtype=float) + 180.0) % 360.0 - 180.0)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class RfChainResponse:
    """Complex transmit (``t``) and receive (``r``) responses per chain."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=complex)
        r = np.asarray(self.r, dtype=complex)
        if t.shape != r.shape:
            raise InvalidInputError("t and r need one entry per chain")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    @property
    def n_chains(self) -> int:
        return self.t.size


def relative_coefficients(resp: RfChainResponse, ref: int = 0) -> np.ndarray:
    """``c_i = t_i r_ref / (r_i t_ref)``; ``c_ref`` is exactly 1.

    Raises
    ------
    ZeroResponseError
        Naming the first chain with ``r_i == 0`` or a zero ``t_ref``.
    """
    t, r = resp.t, resp.r
    zero = np.flatnonzero(r == 0)
    if zero.size:
        raise ZeroResponseError(int(zero[0]))
    if t[ref] == 0:
        raise ZeroResponseError(ref)
    c = (t * r[ref]) / (r * t[ref])
    c[ref] = 1.0 + 0.0j
    return c


def apply_relative_calibration_to_csi(uplink, coefficients) -> np.ndarray:
    """Scale uplink estimates ``r_i h_i`` (last axis = chain) by ``c_i``."""
    uplink = np.asarray(uplink, dtype=complex)
    c = np.asarray(coefficients, dtype=complex)
    if uplink.shape[-1] != c.size:
        raise InvalidInputError(
            f"{uplink.shape[-1]} chains in CSI but {c.size} coefficients")
    return uplink * c


@dataclass
class CalibrationState:
    """Bookkeeping for one array's calibration.

    In absolute mode ``baseline_*`` hold the per-chain phase/gain measured
    against the phase center at boot and ``correction_*`` the currently
    applied compensation. In relative mode ``coefficients`` hold ``c_i``.
    """

    n_chains: int
    mode: str = "absolute"
    ref_id: int = 0
    baseline_phase_deg: np.ndarray | None = None
    baseline_gain_db: np.ndarray | None = None
    correction_phase_deg: np.ndarray = field(default=None)
    correction_gain_db: np.ndarray = field(default=None)
    coefficients: np.ndarray | None = None
    last_cal_temp: np.ndarray | None = None
    last_cal_time: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("absolute", "relative"):
            raise InvalidInputError(f"unknown calibration mode {self.mode!r}")
        if self.correction_phase_deg is None:
            self.correction_phase_deg = np.zeros(self.n_chains)
        if self.correction_gain_db is None:
            self.correction_gain_db = np.zeros(self.n_chains)
        if self.mode == "relative" and self.coefficients is None:
            self.coefficients = np.ones(self.n_chains, dtype=complex)

    @property
    def has_baseline(self) -> bool:
        return self.baseline_phase_deg is not None and self.baseline_gain_db is not None

    def store_baseline(self, phase_deg, gain_db, temperature=None, time_s: float = 0.0):
        self.baseline_phase_deg = np.array(phase_deg, dtype=float).reshape(self.n_chains)
        self.baseline_gain_db = np.array(gain_db, dtype=float).reshape(self.n_chains)
        if temperature is not None:
            self.last_cal_temp = np.array(temperature, dtype=float).reshape(self.n_chains)
        self.last_cal_time = np.full(self.n_chains, float(time_s))

    def corrected(self, raw_phase_deg, raw_gain_db):
        """Chain state after the stored corrections are applied."""
        return (wrap_phase(np.asarray(raw_phase_deg) + self.correction_phase_deg),
                np.asarray(raw_gain_db) + self.correction_gain_db)


def absolute_calibrate(state: CalibrationState, measured_phase_deg, measured_gain_db,
                       chains=None, noise_phase_deg: float = 0.0, noise_gain_db: float = 0.0,
                       rng: np.random.Generator | None = None):
    """Measure chains against the baseline and update their corrections.

    ``measured_*`` are the chains' current outputs, i.e. with the existing
    correction already applied. The returned per-chain increments are
    ``baseline - measured`` (phase wrapped to (-180, 180]); optional
    Gaussian measurement noise perturbs the measurement first.
    """
    if state.mode != "absolute" or not state.has_baseline:
        raise NotInitializedError("absolute calibration needs a stored baseline")
    idx = np.arange(state.n_chains) if chains is None else np.atleast_1d(chains)
    ph = np.asarray(measured_phase_deg, dtype=float).reshape(-1)
    g = np.asarray(measured_gain_db, dtype=float).reshape(-1)
    if ph.size == state.n_chains:
        ph, g = ph[idx], g[idx]
    if noise_phase_deg or noise_gain_db:
        rng = rng if rng is not None else np.random.default_rng()
        ph = ph + noise_phase_deg * rng.standard_normal(ph.shape)
        g = g + noise_gain_db * rng.standard_normal(g.shape)
    d_phase = wrap_phase(state.baseline_phase_deg[idx] - ph)
    d_gain = state.baseline_gain_db[idx] - g
    state.correction_phase_deg[idx] = wrap_phase(state.correction_phase_deg[idx] + d_phase)
    state.correction_gain_db[idx] += d_gain
    return np.atleast_1d(d_phase), np.atleast_1d(d_gain)


@dataclass
class CalibrationSchedule:
    """Calibration events and the per-sample temperature each chain was last calibrated at.

    ``events`` holds ``(time_s, chain, reason)`` tuples in execution order;
    ``last_cal_temp[k]`` is the reference temperature of every chain after
    the events of sample ``k`` completed.
    """

    events: list
    last_cal_temp: np.ndarray
    last_cal_time: np.ndarray

    def events_for(self, chain: int) -> list:
        return [e for e in self.events if e[1] == chain]


def calibration_scheduler(trace: TemperatureTrace, threshold_c: float = 3.0,
                          max_interval_s: float = 1800.0,
                          cal_duration_s: float = 1.0) -> CalibrationSchedule:
    """Trigger per-chain calibration on temperature change or elapsed time.

    Every chain is calibrated at ``t = 0``. At each later sample a chain is
    due when ``|T - T_last| >= threshold_c`` or ``max_interval_s`` has passed
    since its last trigger. Due chains are calibrated one at a time, each
    occupying ``cal_duration_s``; threshold triggers go first, largest drift
    first. Work that would spill past the next sample is deferred.
    """
    times, temps = trace.times_s, trace.temps_c
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("trace timestamps must be strictly increasing")
    n_s, n_c = temps.shape
    last_t = temps[0].copy()
    last_trig = np.full(n_c, times[0])
    hist_t = np.empty_like(temps)
    hist_time = np.empty_like(temps)
    hist_t[0] = last_t
    hist_time[0] = last_trig
    events = []
    busy = times[0]
    for k in range(1, n_s):
        now = times[k]
        horizon = times[k + 1] if k + 1 < n_s else np.inf
        drift = np.abs(temps[k] - last_t)
        by_temp = np.flatnonzero(drift >= threshold_c)
        by_temp = by_temp[np.argsort(-drift[by_temp], kind="stable")]
        by_time = np.flatnonzero((now - last_trig >= max_interval_s) & (drift < threshold_c))
        start = max(now, busy)
        for chain, reason in [(c, "threshold") for c in by_temp] + [(c, "interval") for c in by_time]:
            if start >= horizon:
                break
            events.append((float(start), int(chain), reason))
            last_t[chain] = temps[k, chain]
            last_trig[chain] = now
            start += cal_duration_s
        busy = start
        hist_t[k] = last_t
        hist_time[k] = last_trig
    return CalibrationSchedule(events, hist_t, hist_time)


def drift_since_calibration(trace: TemperatureTrace, schedule: CalibrationSchedule | None,
                            model: TemperatureModel = TemperatureModel(), path: str = "tx"):
    """Per-sample, per-chain (phase deg, gain dB) drift relative to the last calibration.

    With ``schedule=None`` the chains are calibrated only once at ``t = 0``.
    """
    ref = trace.temps_c[[0]] if schedule is None else schedule.last_cal_temp
    return temperature_drift(trace.temps_c - ref, path, model)


def worst_pairwise_error(phase_deg, gain_db) -> tuple[float, float]:
    """Largest difference between any two chains at any sample."""
    phase_deg = np.atleast_2d(phase_deg)
    gain_db = np.atleast_2d(gain_db)
    return (float(np.max(phase_deg.max(axis=1) - phase_deg.min(axis=1))),
            float(np.max(gain_db.max(axis=1) - gain_db.min(axis=1))))


def residual_error_metrics(phase_deg, gain_db) -> tuple[float, float]:
    """RMS phase and gain deviation of the chains from their common phase center.

    The phase center is the circular mean of the chain phases and the gain
    reference the mean dB gain, so a common rotation or gain offset of all
    chains does not count as error.
    """
    ph = np.asarray(phase_deg, dtype=float)
    g = np.asarray(gain_db, dtype=float)
    center = np.degrees(np.angle(np.sum(np.exp(1j * np.radians(ph)))))
    dev = wrap_phase(ph - center)
    return (float(np.sqrt(np.mean(np.square(dev)))),
            float(np.sqrt(np.mean(np.square(g - g.mean())))))


def pattern_with_muted_chain(cfg: ArrayConfig, weights, chain: int, azimuth, elevation):
    """Array factor with one element switched off, as while it is being calibrated."""
    w = np.array(weights, dtype=complex).ravel()
    w[chain] = 0
    return array_factor(cfg, w, azimuth, elevation)
