"""Hexagonal multi-site layout, user drops and a clustered geometric channel.

The propagation model is a simplified urban-macro one: distance-dependent
pathloss with a LOS/NLOS split, i.i.d. log-normal shadowing per (cell, user),
a parabolic sector pattern, and a sum of plane-wave clusters for the
small-scale part. Distances to interfering sites use the wraparound image
closest to the user.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .array import ArrayConfig
from .errors import InvalidConfigurationError, InvalidInputError

logger = logging.getLogger(__name__)

__all__ = [
    "NetworkLayout",
    "UserDrop",
    "ChannelRealization",
    "build_layout",
    "drop_users",
    "pathloss",
    "los_probability",
    "sector_pattern_db",
    "serving_cell",
    "large_scale_gain_db",
    "small_scale_channel",
    "hexagon_distance_cdf",
]

SECTOR_BORESIGHTS = (0.0, 120.0, 240.0)
_RINGS = {1: 0, 7: 1, 19: 2}
_CLUSTER_SHAPE = {7: (2, 1), 19: (3, 2)}


def _rot(v, deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


@dataclass(frozen=True)
class NetworkLayout:
    """Sites on a hexagonal lattice, three sectors each.

    Cell ``c`` belongs to site ``c // 3`` and points at
    ``sector_boresight[c % 3]`` degrees (counter-clockwise from +x).
    ``wrap_vectors`` always contains the zero translation first.
    """

    n_sites: int
    isd: float
    site_xy: np.ndarray
    wrap_vectors: np.ndarray
    bs_height: float = 25.0
    downtilt_deg: float = 10.0
    sector_boresight: tuple = SECTOR_BORESIGHTS

    @property
    def n_cells(self) -> int:
        return 3 * self.n_sites

    @property
    def cell_site(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_sites), 3)

    @property
    def cell_boresight(self) -> np.ndarray:
        return np.tile(np.asarray(self.sector_boresight, dtype=float), self.n_sites)

    @property
    def wraparound(self) -> bool:
        return len(self.wrap_vectors) > 1

    @property
    def hex_radius(self) -> float:
        """Circumradius of the hexagonal area served by one site."""
        return self.isd / math.sqrt(3.0)

    def site_images(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest wraparound image of every site as seen from each point.

        Returns ``(delta, d2d)`` where ``delta[s, u]`` is the 2D vector from
        the chosen image of site ``s`` to point ``u``.
        """
        xy = np.atleast_2d(xy)
        d = xy[None, None, :, :] - (self.site_xy[None, :, None, :] + self.wrap_vectors[:, None, None, :])
        dist = np.linalg.norm(d, axis=-1)                       # (images, sites, users)
        k = np.argmin(dist, axis=0)
        s_idx, u_idx = np.indices(k.shape)
        return d[k, s_idx, u_idx], dist[k, s_idx, u_idx]


@dataclass
class UserDrop:
    """User positions and per-(cell, user) large-scale records.

    Arrays indexed ``[cell, user]`` hold pathloss, shadowing, LOS flag,
    azimuth relative to the sector boresight, elevation (negative below the
    horizon) and 2D/3D distances to the nearest image of the cell's site.
    """

    positions: np.ndarray        # (U, 3)
    home_cell: np.ndarray        # (U,) cell whose footprint the user was dropped in
    serving: np.ndarray          # (U,)
    pathloss_db: np.ndarray
    shadowing_db: np.ndarray
    los: np.ndarray
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    d2d: np.ndarray
    d3d: np.ndarray
    gain_db: np.ndarray          # element gain + sector pattern - pathloss - shadowing

    @property
    def n_users(self) -> int:
        return self.positions.shape[0]

    def users_of(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.serving == cell)


@dataclass
class ChannelRealization:
    """Element-level channels ``H[cell, user]`` of shape (UE antennas, BS elements).

    Channels include the linear large-scale gain ``10**(gain_db/10)``.
    """

    H: np.ndarray                # (C, U, n_rx, n_tx)
    gain_db: np.ndarray          # (C, U)

    def port_channels(self, combining: np.ndarray) -> np.ndarray:
        """Channels seen by digitized ports through an element-to-port matrix."""
        return self.H @ combining


def build_layout(n_sites: int = 19, isd: float = 500.0, bs_height: float = 25.0,
                 downtilt_deg: float = 10.0) -> NetworkLayout:
    """Hexagonal rings of sites around a central one, with wraparound for 7/19 sites.

    Nearest-neighbour sites lie at 30 + 60k degrees so that every sector
    boresight points between two neighbours.
    """
    if n_sites not in _RINGS:
        raise InvalidConfigurationError(f"n_sites must be one of 1, 7, 19 (got {n_sites})")
    if not isd > 0:
        raise InvalidConfigurationError("inter-site distance must be positive")
    a1 = isd * np.array([math.cos(math.radians(30)), math.sin(math.radians(30))])
    a2 = isd * np.array([0.0, 1.0])
    rings = _RINGS[n_sites]
    pts = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            ring = max(abs(q), abs(r), abs(q + r))
            if ring <= rings:
                p = q * a1 + r * a2
                pts.append((ring, math.atan2(p[1], p[0]) % (2 * math.pi), p))
    pts.sort(key=lambda x: (x[0], round(x[1], 9)))
    site_xy = np.array([p for _, _, p in pts])
    wrap = [np.zeros(2)]
    if n_sites in _CLUSTER_SHAPE:
        i, j = _CLUSTER_SHAPE[n_sites]
        A1 = i * a1 + j * a2
        for k in range(6):
            wrap.append(_rot(A1, 60 * k))
    return NetworkLayout(n_sites, float(isd), site_xy, np.array(wrap), bs_height, downtilt_deg)


def hexagon_distance_cdf(r, inradius: float):
    """CDF of the distance from the centre of a uniformly sampled regular hexagon."""
    r = np.asarray(r, dtype=float)
    a = inradius
    R = 2 * a / math.sqrt(3)
    area = 2 * math.sqrt(3) * a * a
    rc = np.clip(r, 0, R)
    inside = math.pi * rc**2
    ratio = np.clip(a / np.maximum(rc, 1e-300), -1, 1)
    seg = rc**2 * np.arccos(ratio) - a * np.sqrt(np.maximum(rc**2 - a * a, 0))
    covered = np.where(rc <= a, inside, inside - 6 * seg)
    return np.clip(covered / area, 0, 1)


def sector_pattern_db(azimuth_deg, hpbw: float = 65.0, front_to_back: float = 25.0):
    """Parabolic horizontal sector pattern ``-min(12*(az/hpbw)^2, FB)``."""
    az = (np.asarray(azimuth_deg, dtype=float) + 180.0) % 360.0 - 180.0
    return -np.minimum(12.0 * (az / hpbw) ** 2, front_to_back)


def los_probability(d2d, h_ue=1.5):
    """Urban-macro LOS probability as a function of 2D distance and UE height."""
    d = np.maximum(np.asarray(d2d, dtype=float), 1e-9)
    h = np.asarray(h_ue, dtype=float)
    c = np.where(h <= 13, 0.0, ((np.clip(h, 13, 23) - 13) / 10) ** 1.5)
    base = 18 / d + np.exp(-d / 63) * (1 - 18 / d)
    p = base * (1 + c * 1.25 * (d / 100) ** 3 * np.exp(-d / 150))
    return np.where(d <= 18, 1.0, np.clip(p, 0, 1))


def pathloss(distance3d, fc: float, los, h_ue=1.5):
    """Simplified urban-macro pathloss in dB.

    LOS: ``22*log10(d) + 28 + 20*log10(fc/1e9)``; NLOS:
    ``max(LOS, 13.54 + 39.08*log10(d) + 20*log10(fc/1e9) - 0.6*(h_ue - 1.5))``.
    Distances below 10 m are clamped to 10 m.
    """
    d = np.asarray(distance3d, dtype=float)
    if np.any(d < 10):
        logger.warning("clamping %d distance(s) below 10 m", int(np.sum(d < 10)))
        d = np.maximum(d, 10.0)
    f = 20 * math.log10(fc / 1e9)
    pl_los = 22 * np.log10(d) + 28 + f
    pl_nlos = 13.54 + 39.08 * np.log10(d) + f - 0.6 * (np.asarray(h_ue, dtype=float) - 1.5)
    out = np.where(np.asarray(los, dtype=bool), pl_los, np.maximum(pl_los, pl_nlos))
    return float(out) if out.ndim == 0 else out


def serving_cell(gain_db) -> np.ndarray:
    """Index of the strongest cell for each user (``gain_db`` is ``[cell, user]``).

    ``np.argmax`` returns the first maximum, so ties go to the lowest cell id.
    """
    return np.argmax(np.asarray(gain_db), axis=0)


def large_scale_gain_db(drop: UserDrop, element_gain_dbi: float = 5.0) -> np.ndarray:
    return (element_gain_dbi + sector_pattern_db(drop.azimuth_deg)
            - drop.pathloss_db - drop.shadowing_db)


def _geometry(layout: NetworkLayout, pos: np.ndarray):
    delta, d2d = layout.site_images(pos[:, :2])               # (S, U, 2), (S, U)
    site = layout.cell_site
    delta, d2d = delta[site], d2d[site]                         # per cell
    az_abs = np.degrees(np.arctan2(delta[..., 1], delta[..., 0]))
    az = (az_abs - layout.cell_boresight[:, None] + 180.0) % 360.0 - 180.0
    dh = pos[None, :, 2] - layout.bs_height
    el = np.degrees(np.arctan2(dh, d2d))
    d3d = np.sqrt(d2d**2 + dh**2)
    return az, el, d2d, d3d


def drop_users(layout: NetworkLayout, per_cell: int, rng: np.random.Generator,
               fc: float = 2e9, height_range=(1.5, 22.5), shadow_std_db: float = 6.0,
               element_gain_dbi: float = 5.0) -> UserDrop:
    """Drop ``per_cell`` users uniformly in every cell footprint and attach them.

    A sector's footprint is the rhombus (one third of its site hexagon)
    centred on the boresight. Heights are uniform in ``height_range``.
    """
    if per_cell < 1:
        raise InvalidInputError("per_cell must be >= 1")
    C = layout.n_cells
    R = layout.hex_radius
    u = rng.uniform(size=(C, per_cell, 2))
    bore = layout.cell_boresight
    v1 = np.stack([np.cos(np.radians(bore - 60)), np.sin(np.radians(bore - 60))], -1) * R
    v2 = np.stack([np.cos(np.radians(bore + 60)), np.sin(np.radians(bore + 60))], -1) * R
    xy = (layout.site_xy[layout.cell_site][:, None, :]
          + u[..., :1] * v1[:, None, :] + u[..., 1:] * v2[:, None, :])
    h = rng.uniform(height_range[0], height_range[1], size=(C, per_cell))
    pos = np.concatenate([xy, h[..., None]], -1).reshape(-1, 3)
    home = np.repeat(np.arange(C), per_cell)

    az, el, d2d, d3d = _geometry(layout, pos)
    h_ue = pos[None, :, 2]
    los = rng.uniform(size=d2d.shape) < los_probability(d2d, h_ue)
    pl = pathloss(np.maximum(d3d, 10.0), fc, los, h_ue)
    sf = shadow_std_db * rng.standard_normal(d2d.shape)
    drop = UserDrop(pos, home, np.zeros(pos.shape[0], dtype=int), pl, sf, los,
                    az, el, d2d, d3d, np.zeros_like(pl))
    drop.gain_db = large_scale_gain_db(drop, element_gain_dbi)
    drop.serving = serving_cell(drop.gain_db)
    return drop


def _ray_response(cfg: ArrayConfig, az_deg, el_deg):
    """Array response without the [-90, 90] range check (rays may arrive from behind)."""
    az = np.radians(az_deg)[..., None, None]
    el = np.radians(el_deg)[..., None, None]
    m = np.arange(cfg.rows)[:, None]
    n = np.arange(cfg.cols)[None, :]
    ph = 2 * np.pi * cfg.spacing * (n * np.sin(az) * np.cos(el) + m * np.sin(el))
    return np.exp(1j * ph).reshape(np.shape(az_deg) + (cfg.rows * cfg.cols,))


def small_scale_channel(layout: NetworkLayout, drop: UserDrop, cfg: ArrayConfig,
                        n_clusters: int, rng: np.random.Generator, n_rx: int = 2,
                        azimuth_spread: float = 30.0, elevation_spread: float = 8.0,
                        k_factor_db: float = 9.0, ue_gain_dbi: float = 0.0,
                        cells=None) -> ChannelRealization:
    """Clustered plane-wave channel between every cell and every user.

    Each cluster has a Gaussian-distributed departure angle around the LOS
    direction, a uniformly random arrival angle at the 2-element UE, and an
    independent complex Gaussian gain per BS polarization, so a single
    cluster yields a rank-1 matrix per polarization. Cluster powers are
    random and sum to one; LOS links add a dominant ray with Rician factor
    ``k_factor_db``. The result is scaled by the linear large-scale gain.
    """
    if n_clusters < 1:
        raise InvalidInputError("n_clusters must be >= 1")
    cells = np.arange(layout.n_cells) if cells is None else np.asarray(cells)
    U = drop.n_users
    K = n_clusters
    P = cfg.polarizations
    nel = cfg.elements_per_pol
    tilt = layout.downtilt_deg
    H = np.empty((len(cells), U, n_rx, P * nel), dtype=complex)
    k_lin = 10 ** (k_factor_db / 10)
    for i, c in enumerate(cells):
        az0 = drop.azimuth_deg[c][:, None]
        el0 = drop.elevation_deg[c][:, None]
        az = az0 + azimuth_spread * rng.standard_normal((U, K))
        el = np.clip(el0 + elevation_spread * rng.standard_normal((U, K)), -90, 90)
        pw = rng.exponential(size=(U, K))
        pw /= pw.sum(axis=1, keepdims=True)
        g = np.sqrt(pw / 2)[..., None] * (rng.standard_normal((U, K, P))
                                          + 1j * rng.standard_normal((U, K, P)))
        aoa = rng.uniform(-np.pi, np.pi, size=(U, K))
        los_phase = rng.uniform(0, 2 * np.pi, size=(U, P))
        los_aoa = rng.uniform(-np.pi, np.pi, size=U)
        los = drop.los[c]
        if np.any(los):
            scale = np.where(los, 1 / math.sqrt(1 + k_lin), 1.0)
            g *= scale[:, None, None]
            az = np.concatenate([az0, az], axis=1)
            el = np.concatenate([el0, el], axis=1)
            g_los = np.where(los, math.sqrt(k_lin / (1 + k_lin)), 0.0)[:, None] * np.exp(1j * los_phase)
            g = np.concatenate([g_los[:, None, :], g], axis=1)
            aoa = np.concatenate([los_aoa[:, None], aoa], axis=1)
        a_bs = _ray_response(cfg, ((az + 180) % 360) - 180, el + tilt)   # (U, K', nel)
        a_ue = np.exp(1j * np.pi * np.arange(n_rx)[None, None, :] * np.sin(aoa)[..., None])
        Hc = np.einsum("ukp,ukr,uke->urpe", g, a_ue, a_bs, optimize=True)
        amp = 10 ** ((drop.gain_db[c] + ue_gain_dbi) / 20)
        H[i] = Hc.reshape(U, n_rx, P * nel) * amp[:, None, None]
    return ChannelRealization(H, drop.gain_db[cells])
