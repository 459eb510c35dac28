"""Monte-Carlo downlink simulation: drops, TTI loop, sweeps and aggregation.

Every drop places users, draws channels and draws one set of standard
normal per-port error variables. All port configurations and all points of
the error grid are evaluated on that same drop, with the error variables
scaled to each grid point, so the curves share common random numbers.

Channels are normalized so that noise has unit power and every cell
transmits unit total power scaled by ``tx_power_dbm``. There is no UE
mobility: the channel is static within a drop, so every periodic CSI
report carries the same content and the feedback timing only decides which
report is in force.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np
from scipy import stats

from .array import ArrayConfig, map_ports_to_elements
from .calibration import calibration_scheduler, drift_since_calibration
from .channel import build_layout, drop_users, small_scale_channel
from .errors import InvalidConfigurationError, InvalidInputError
from .impairments import (
    MAGNITUDE_MODELS,
    TemperatureModel,
    amplitude_factors,
    coherence_factor,
    generate_temperature_trace,
    magnitude_error_std,
)
from .precoding import (
    RoundRobinScheduler,
    build_codebook,
    cqi_from_sinr,
    latest_report_time,
    select_pmi_cqi,
    sinr_from_cqi,
    spectral_efficiency,
    su_mu_switch,
)
from .rng import substream

__all__ = [
    "PHASE_GRID_DEG",
    "MAG_GRID_DB",
    "PORT_SWEEP",
    "WORKERS_ENV",
    "SimConfig",
    "DropRecord",
    "Summary",
    "SweepPoint",
    "SweepResult",
    "PairedResult",
    "run_drop",
    "run_sweep",
    "compare_single_vs_multi_cell",
    "aggregate",
    "post_mmse_sinr",
    "resolve_workers",
]

log = logging.getLogger(__name__)

PHASE_GRID_DEG = (0.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0)
MAG_GRID_DB = (0.0, 0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 9.0)
# (V, H) for 4, 8, 16 and 32 ports.
PORT_SWEEP = ((1, 2), (2, 2), (2, 4), (4, 4))
WORKERS_ENV = "FDMIMO_MAX_WORKERS"
THERMAL_DBM_HZ = -174.0
DRIFT_TRACE_S = 86400.0

_DUPLEX = ("FDD", "TDD")
_PRECODERS = ("zf", "mf", "codebook")


@dataclass(frozen=True)
class SimConfig:
    """Complete, validated description of one simulation campaign.

    ``seed`` is mandatory. ``bandwidth_hz=None`` and ``precoder=None``
    resolve by duplex mode (10 MHz and codebook feedback for FDD, 20 MHz
    with half the time on the downlink and zero forcing for TDD).
    ``port_configs`` lists ``(V, H)`` port grids; errors are swept over the
    Cartesian product of ``phase_grid_deg`` and ``mag_grid_db``.
    """

    seed: int
    duplex: str = "FDD"
    bandwidth_hz: float | None = None
    port_configs: tuple = ((4, 4),)
    precoder: str | None = None
    n_sites: int = 19
    isd: float = 500.0
    users_per_cell: int = 10
    n_drops: int = 30
    n_ttis: int = 100
    feedback_period_ms: int = 5
    feedback_delay_ms: int = 6
    noise_figure_db: float = 9.0
    tx_power_dbm: float = 46.0
    fc: float = 2e9
    rows: int = 12
    cols: int = 4
    polarizations: int = 2
    spacing: float = 0.5
    element_gain_dbi: float = 5.0
    ue_antennas: int = 2
    ue_gain_dbi: float = 0.0
    n_clusters: int = 20
    azimuth_spread_deg: float = 30.0
    elevation_spread_deg: float = 8.0
    k_factor_db: float = 9.0
    shadowing_std_db: float = 6.0
    bs_height: float = 25.0
    downtilt_deg: float = 10.0
    ue_height_range: tuple = (1.5, 22.5)
    max_layers: int = 4
    codebook_oversampling: int = 4
    cqi_levels: int = 15
    phase_grid_deg: tuple = (0.0,)
    mag_grid_db: tuple = (0.0,)
    magnitude_model: str = "squared"
    redraw_errors: bool = False
    temperature_drift: bool = False
    calibration: bool = False
    cal_threshold_c: float = 3.0
    cal_interval_s: float = 1800.0
    interference_scale: float = 1.0

    def __post_init__(self):
        def bad(msg):
            raise InvalidConfigurationError(msg)

        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            bad(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.duplex not in _DUPLEX:
            bad(f"duplex must be one of {_DUPLEX}, got {self.duplex!r}")
        if self.precoder is not None and self.precoder not in _PRECODERS:
            bad(f"precoder must be one of {_PRECODERS}, got {self.precoder!r}")
        object.__setattr__(self, "port_configs",
                           tuple(tuple(int(x) for x in p) for p in self.port_configs))
        object.__setattr__(self, "phase_grid_deg", tuple(float(x) for x in self.phase_grid_deg))
        object.__setattr__(self, "mag_grid_db", tuple(float(x) for x in self.mag_grid_db))
        object.__setattr__(self, "ue_height_range", tuple(float(x) for x in self.ue_height_range))
        arr = self.array  # validates the geometry
        if not self.port_configs:
            bad("port_configs must not be empty")
        for p in self.port_configs:
            if len(p) != 2:
                bad(f"port config must be (V, H), got {p}")
            v, h = p
            if v < 1 or arr.rows % v:
                bad(f"{v} vertical ports do not divide {arr.rows} rows")
            if h < 1 or arr.cols % h:
                bad(f"{h} horizontal ports do not divide {arr.cols} columns")
            if v * h * arr.polarizations > 32:
                bad(f"port config {p} exceeds 32 ports")
        if not self.phase_grid_deg or not self.mag_grid_db:
            bad("error grids must not be empty")
        if any(x < 0 for x in self.phase_grid_deg):
            bad("RMS phase errors must be non-negative")
        if any(not 0 <= x <= 9 for x in self.mag_grid_db):
            bad("RMS magnitude errors must lie in [0, 9] dB")
        if self.magnitude_model not in MAGNITUDE_MODELS:
            bad(f"magnitude_model must be one of {MAGNITUDE_MODELS}, got {self.magnitude_model!r}")
        if self.n_sites not in (1, 7, 19):
            bad(f"n_sites must be 1, 7 or 19, got {self.n_sites}")
        for name in ("users_per_cell", "n_drops", "n_ttis", "feedback_period_ms", "n_clusters",
                     "max_layers", "codebook_oversampling", "cqi_levels", "ue_antennas"):
            if getattr(self, name) < 1:
                bad(f"{name} must be >= 1")
        if self.feedback_delay_ms < 0:
            bad("feedback_delay_ms must be >= 0")
        if self.bandwidth_hz is not None and not self.bandwidth_hz > 0:
            bad("bandwidth_hz must be positive")
        if not self.isd > 0:
            bad("isd must be positive")
        if self.interference_scale < 0:
            bad("interference_scale must be non-negative")
        lo, hi = self.ue_height_range
        if not 0 < lo <= hi:
            bad("ue_height_range must satisfy 0 < low <= high")

    @property
    def array(self) -> ArrayConfig:
        return ArrayConfig(self.rows, self.cols, self.polarizations, self.spacing,
                           self.element_gain_dbi, self.fc)

    @property
    def resolved_bandwidth(self) -> float:
        if self.bandwidth_hz is not None:
            return float(self.bandwidth_hz)
        return 10e6 if self.duplex == "FDD" else 20e6

    @property
    def resolved_precoder(self) -> str:
        if self.precoder is not None:
            return self.precoder
        return "codebook" if self.duplex == "FDD" else "zf"

    @property
    def downlink_share(self) -> float:
        return 1.0 if self.duplex == "FDD" else 0.5

    @property
    def noise_dbm(self) -> float:
        return THERMAL_DBM_HZ + 10 * math.log10(self.resolved_bandwidth) + self.noise_figure_db

    @property
    def grid(self) -> list:
        """Error grid points ``(rms_phase_deg, rms_mag_db)``, phase-major."""
        return list(product(self.phase_grid_deg, self.mag_grid_db))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["port_configs"] = [list(p) for p in self.port_configs]
        d["phase_grid_deg"] = list(self.phase_grid_deg)
        d["mag_grid_db"] = list(self.mag_grid_db)
        d["ue_height_range"] = list(self.ue_height_range)
        return d


@dataclass
class DropRecord:
    """Results of one drop, indexed ``[port_config, grid_point, ...]``.

    Throughputs are in Mbps. ``power_factor`` is the mean per-port power
    ``E|g|^2`` of the error gains before they are renormalized to keep the
    cell's transmit power constant.
    """

    drop_index: int
    cell_tput: np.ndarray        # (P, G, C)
    user_tput: np.ndarray        # (P, G, U)
    su_count: np.ndarray         # (P, G)
    decisions: np.ndarray        # (P, G)
    power_factor: np.ndarray     # (P, G)

    @property
    def mean_cell_tput(self) -> np.ndarray:
        return self.cell_tput.mean(axis=-1)


# ---------------------------------------------------------------- link level

def post_mmse_sinr(Y, serving, layer, interference_scale: float = 1.0) -> np.ndarray:
    """Post-MMSE SINR of each scheduled user with noise normalized to one.

    ``Y[k, c]`` is the ``(n_rx, layers)`` matrix of signals from cell ``c``
    as seen by scheduled user ``k``; the user is served by ``serving[k]`` on
    column ``layer[k]``. Other layers of the serving cell are intra-cell
    interference; other cells contribute ``interference_scale`` times their
    power.
    """
    Y = np.asarray(Y)
    n = Y.shape[0]
    k = np.arange(n)
    n_rx = Y.shape[2]
    own = Y[k, serving]                                              # (n, rx, L)
    all_cov = np.einsum("ncrl,ncsl->nrs", Y, Y.conj())
    own_cov = own @ np.swapaxes(own.conj(), 1, 2)
    total = (np.eye(n_rx) + interference_scale * (all_cov - own_cov)) + own_cov
    y = own[k, :, layer]                                             # (n, rx)
    s = np.real(np.einsum("nr,nr->n", y.conj(), np.linalg.solve(total, y[..., None])[..., 0]))
    s = np.clip(s, 0.0, 1.0 - 1e-15)
    return s / (1.0 - s)


# ---------------------------------------------------------------- drop level

@dataclass
class _PortContext:
    v: int
    h: int
    n_ports: int
    Hp: np.ndarray               # (U, C, rx, ports)
    rows: np.ndarray             # (U, ports) CSI rows the precoder is built from
    codewords: np.ndarray | None
    eta: np.ndarray              # (U,) noise plus expected inter-cell interference


def _port_context(cfg: SimConfig, H: np.ndarray, serving: np.ndarray, v: int, h: int) -> _PortContext:
    arr = cfg.array
    A = map_ports_to_elements(arr, v, h).combining_matrix()
    Hp = np.ascontiguousarray(np.swapaxes(H @ A, 0, 1))               # (U, C, rx, P)
    U, C, n_rx, P = Hp.shape
    u = np.arange(U)
    own = Hp[u, serving]
    total = np.sum(np.abs(Hp) ** 2, axis=(1, 2, 3))
    own_pw = np.sum(np.abs(own) ** 2, axis=(1, 2))
    eta = 1.0 + cfg.interference_scale * (total - own_pw) / (n_rx * P)

    created = latest_report_time(0, cfg.feedback_period_ms, cfg.feedback_delay_ms)
    codewords = None
    if cfg.duplex == "TDD":
        # Reciprocity: the serving cell sees the true channel at training time.
        _, s, vh = np.linalg.svd(own, full_matrices=False)
        rows = s[:, :1] * vh[:, 0, :]
    else:
        cb = build_codebook(v, h, cfg.codebook_oversampling, arr.polarizations)
        rows = np.empty((U, P), dtype=complex)
        codewords = np.empty((U, P), dtype=complex)
        for i in range(U):
            rep = select_pmi_cqi(own[i], cb, eta[i], created)
            cqi = cqi_from_sinr(rep.sinr, cfg.cqi_levels)
            gamma = float(sinr_from_cqi(cqi, cfg.cqi_levels))
            w = cb.vectors[rep.pmi]
            codewords[i] = w
            rows[i] = math.sqrt(gamma * eta[i]) * w.conj()
    return _PortContext(v, h, P, Hp, rows, codewords, eta)


def _drift_errors(cfg: SimConfig, drop_index: int, n_cells: int, n_chains: int):
    """Per-cell, per-chain temperature-induced (phase deg, gain dB) at a random instant."""
    if not cfg.temperature_drift:
        return np.zeros((n_cells, n_chains)), np.zeros((n_cells, n_chains))
    rng = substream(cfg.seed, drop_index, "temperature")
    model = TemperatureModel()
    phase = np.empty((n_cells, n_chains))
    gain = np.empty((n_cells, n_chains))
    for c in range(n_cells):
        trace = generate_temperature_trace(model, DRIFT_TRACE_S, n_chains, rng)
        k = int(rng.integers(trace.times_s.size))
        schedule = (calibration_scheduler(trace, cfg.cal_threshold_c, cfg.cal_interval_s)
                    if cfg.calibration else None)
        ph, g = drift_since_calibration(trace, schedule, model, "tx")
        phase[c], gain[c] = ph[k], g[k]
    return phase, gain


def _port_gains(z_phase, z_mag, drift_phase, drift_gain, rms_phase, rms_mag, model):
    """Per-cell complex port gains renormalized to unit mean power."""
    amp = amplitude_factors(magnitude_error_std(rms_mag, model) * z_mag, model)
    amp = amp * 10 ** (drift_gain / 20)
    g = amp * np.exp(1j * np.radians(rms_phase * z_phase + drift_phase))
    power = np.mean(np.abs(g) ** 2, axis=-1, keepdims=True)
    g = np.where(power > 0, g / np.sqrt(np.where(power > 0, power, 1.0)), 1.0)
    return g, float(power.mean())


def _candidate_sets(serving_lists, n_ttis: int, max_layers: int):
    scheds = [RoundRobinScheduler(users, max_layers) for users in serving_lists]
    return [[tuple(s.next()) for s in scheds] for _ in range(n_ttis)]


def run_drop(cfg: SimConfig, drop_index: int) -> DropRecord:
    """Simulate one drop for every port configuration and grid point of ``cfg``."""
    layout = build_layout(cfg.n_sites, cfg.isd, cfg.bs_height, cfg.downtilt_deg)
    arr = cfg.array
    drop = drop_users(layout, cfg.users_per_cell, substream(cfg.seed, drop_index, "users"),
                      cfg.fc, cfg.ue_height_range, cfg.shadowing_std_db, cfg.element_gain_dbi)
    ch = small_scale_channel(layout, drop, arr, cfg.n_clusters,
                             substream(cfg.seed, drop_index, "channel"), cfg.ue_antennas,
                             cfg.azimuth_spread_deg, cfg.elevation_spread_deg,
                             cfg.k_factor_db, cfg.ue_gain_dbi)
    H = ch.H * 10 ** ((cfg.tx_power_dbm - cfg.noise_dbm) / 20)
    C, U = layout.n_cells, drop.n_users
    serving = drop.serving
    max_chains = max(v * h for v, h in cfg.port_configs) * arr.polarizations

    rng_err = substream(cfg.seed, drop_index, "impairments")
    shape = (cfg.n_ttis, C, max_chains) if cfg.redraw_errors else (1, C, max_chains)
    z_phase = rng_err.standard_normal(shape)
    z_mag = rng_err.standard_normal(shape)
    d_phase, d_gain = _drift_errors(cfg, drop_index, C, max_chains)

    cands = _candidate_sets([drop.users_of(c) for c in range(C)], cfg.n_ttis, cfg.max_layers)
    grid = cfg.grid
    n_p, n_g = len(cfg.port_configs), len(grid)
    cell_tput = np.zeros((n_p, n_g, C))
    user_tput = np.zeros((n_p, n_g, U))
    su_count = np.zeros((n_p, n_g), dtype=int)
    decisions = np.zeros((n_p, n_g), dtype=int)
    power_factor = np.zeros((n_p, n_g))
    scale = cfg.resolved_bandwidth * cfg.downlink_share / 1e6 / cfg.n_ttis
    L = cfg.max_layers
    precoder = cfg.resolved_precoder

    for pi, (v, h) in enumerate(cfg.port_configs):
        ctx = _port_context(cfg, H, serving, v, h)
        P = ctx.n_ports
        built = {}
        for gi, (ph_rms, mag_rms) in enumerate(grid):
            kappa = coherence_factor(ph_rms, mag_rms, cfg.magnitude_model)
            cache = {}
            powers = []
            for t in range(cfg.n_ttis):
                e = t if cfg.redraw_errors else 0
                if t == 0 or cfg.redraw_errors:
                    g, pw = _port_gains(z_phase[e, :, :P], z_mag[e, :, :P],
                                        d_phase[:, :P], d_gain[:, :P], ph_rms, mag_rms,
                                        cfg.magnitude_model)
                    powers.append(pw)
                X = np.zeros((C, P, L), dtype=complex)
                sched, cells, layers = [], [], []
                for c in range(C):
                    cand = cands[t][c]
                    if not cand:
                        continue
                    key = (c, cand)
                    dec = cache.get(key)
                    if dec is None:
                        idx = list(cand)
                        cw = None if ctx.codewords is None else ctx.codewords[idx]
                        dec = su_mu_switch(idx, ctx.rows[idx], ctx.eta[idx], precoder, cw, kappa, built)
                        cache[key] = dec
                    k = len(dec.users)
                    X[c, :, :k] = g[c][:, None] * dec.W
                    sched.extend(dec.users)
                    cells.extend([c] * k)
                    layers.extend(range(k))
                    decisions[pi, gi] += 1
                    su_count[pi, gi] += dec.mode == "SU"
                if not sched:
                    continue
                S = np.asarray(sched)
                Y = ctx.Hp[S] @ X
                sinr = post_mmse_sinr(Y, np.asarray(cells), np.asarray(layers),
                                      cfg.interference_scale)
                rate = spectral_efficiency(sinr) * scale
                cell_tput[pi, gi] += np.bincount(cells, rate, minlength=C)
                user_tput[pi, gi] += np.bincount(S, rate, minlength=U)
            power_factor[pi, gi] = float(np.mean(powers))
            if power_factor[pi, gi] != 1.0:
                log.debug("drop %d ports (%d,%d) grid %s: mean port power %.4f before renormalization",
                          drop_index, v, h, grid[gi], power_factor[pi, gi])
    return DropRecord(drop_index, cell_tput, user_tput, su_count, decisions, power_factor)


# ---------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class Summary:
    """Mean, sample standard deviation and 95 % t-interval half-width over drops.

    ``ci_defined`` is False (and ``ci95`` NaN) with a single record.
    """

    mean: float
    std: float
    ci95: float
    n: int
    ci_defined: bool
    percentiles: dict = field(default_factory=dict)


def aggregate(values, user_samples=None) -> Summary:
    """Summarize per-drop values; optional per-user samples give 5/50/95 percentiles."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise InvalidInputError("cannot aggregate an empty set of records")
    n = x.size
    mean = float(x.mean())
    if n == 1:
        std, ci, ok = 0.0, math.nan, False
    else:
        std = float(x.std(ddof=1))
        ci = float(stats.t.ppf(0.975, n - 1) * std / math.sqrt(n))
        ok = True
    pct = {}
    if user_samples is not None:
        u = np.asarray(user_samples, dtype=float).ravel()
        if u.size:
            pct = {q: float(np.percentile(u, q)) for q in (5, 50, 95)}
    return Summary(mean, std, ci, n, ok, pct)


@dataclass(frozen=True)
class SweepPoint:
    duplex: str
    precoder: str
    v_ports: int
    h_ports: int
    total_ports: int
    rms_phase_deg: float
    rms_mag_db: float
    mean_cell_tput_mbps: float
    ci95_mbps: float
    su_fraction: float
    n_drops: int
    n_ttis: int
    seed: int
    summary: Summary
    drop_means: np.ndarray = field(repr=False)
    power_factor: float = 1.0


@dataclass
class SweepResult:
    config: SimConfig
    points: list
    records: list = field(repr=False, default_factory=list)

    def point(self, v: int, h: int, rms_phase_deg: float = 0.0, rms_mag_db: float = 0.0) -> SweepPoint:
        for p in self.points:
            if (p.v_ports, p.h_ports) == (v, h) and math.isclose(p.rms_phase_deg, rms_phase_deg) \
                    and math.isclose(p.rms_mag_db, rms_mag_db):
                return p
        raise KeyError((v, h, rms_phase_deg, rms_mag_db))

    def curve(self, v: int, h: int, axis: str = "phase") -> tuple[np.ndarray, np.ndarray]:
        """(grid values, mean throughput) along one error axis for a port config."""
        pts = [p for p in self.points if (p.v_ports, p.h_ports) == (v, h)]
        key = "rms_phase_deg" if axis == "phase" else "rms_mag_db"
        x = np.array([getattr(p, key) for p in pts])
        y = np.array([p.mean_cell_tput_mbps for p in pts])
        return x, y


def resolve_workers(requested: int | None) -> int:
    """Requested worker count, capped by the ``FDMIMO_MAX_WORKERS`` environment variable."""
    n = 1 if requested is None else int(requested)
    if n < 1:
        raise InvalidConfigurationError("workers must be >= 1")
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise InvalidConfigurationError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from exc
    return n


def _run_drops(cfg: SimConfig, workers: int) -> list:
    idx = list(range(cfg.n_drops))
    workers = min(resolve_workers(workers), len(idx))
    if workers == 1:
        return [run_drop(cfg, d) for d in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_drop, [cfg] * len(idx), idx))


def _summarize(cfg: SimConfig, records: list) -> list:
    points = []
    for pi, (v, h) in enumerate(cfg.port_configs):
        for gi, (ph, mag) in enumerate(cfg.grid):
            means = np.array([r.mean_cell_tput[pi, gi] for r in records])
            users = np.concatenate([r.user_tput[pi, gi] for r in records])
            s = aggregate(means, users)
            n_dec = sum(int(r.decisions[pi, gi]) for r in records)
            su = sum(int(r.su_count[pi, gi]) for r in records) / n_dec if n_dec else math.nan
            pf = float(np.mean([r.power_factor[pi, gi] for r in records]))
            points.append(SweepPoint(
                cfg.duplex, cfg.resolved_precoder, v, h, v * h * cfg.polarizations, ph, mag,
                s.mean, s.ci95, su, len(records), cfg.n_ttis, cfg.seed, s, means, pf))
    return points


def run_sweep(cfg: SimConfig, workers: int = 1) -> SweepResult:
    """Run all drops (in parallel when ``workers > 1``) and aggregate per grid point.

    Drops are collected in index order, so results do not depend on the
    number of workers.
    """
    records = _run_drops(cfg, workers)
    return SweepResult(cfg, _summarize(cfg, records), records)


@dataclass
class PairedResult:
    """Single-cell and multi-cell sweeps with curves normalized to the zero-error point."""

    single: SweepResult
    multi: SweepResult

    @staticmethod
    def _normalized(res: SweepResult, v: int, h: int, axis: str):
        x, y = res.curve(v, h, axis)
        return x, y / y[0]

    def normalized(self, v: int, h: int, axis: str = "phase"):
        """``(grid, single-cell curve, multi-cell curve)``, each divided by its first point."""
        x, s = self._normalized(self.single, v, h, axis)
        _, m = self._normalized(self.multi, v, h, axis)
        return x, s, m


def compare_single_vs_multi_cell(cfg: SimConfig, workers: int = 1) -> PairedResult:
    """Run a single-site network and the multi-site network with the same seed.

    The single-site variant keeps the three co-sited sectors and their
    mutual interference but has no neighbouring sites. The multi-cell
    variant keeps ``cfg.n_sites`` (19 unless overridden).
    """
    single = run_sweep(replace(cfg, n_sites=1), workers)
    multi = run_sweep(cfg, workers)
    return PairedResult(single, multi)
