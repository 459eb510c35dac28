"""Planar array geometry, antenna-port virtualization and beam patterns.

Element indexing is row-major within a polarization: element ``(p, m, n)``
(polarization, row, column) has flat index ``p*M*N + m*N + n``. Steering
vectors cover a single polarization (length ``M*N``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigurationError, InvalidInputError

__all__ = [
    "ArrayConfig",
    "PortMapping",
    "map_ports_to_elements",
    "steering_vector",
    "array_factor",
    "null_depth_from_phase_error",
]


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform rectangular array, optionally dual polarized.

    Attributes
    ----------
    rows, cols : int
        ``M`` and ``N``.
    polarizations : int
        ``P``, 1 or 2.
    spacing : float
        Element spacing in carrier wavelengths.
    element_gain_dbi : float
        Flat (isotropic) element gain.
    fc : float
        Carrier frequency in Hz.
    """

    rows: int = 12
    cols: int = 4
    polarizations: int = 2
    spacing: float = 0.5
    element_gain_dbi: float = 5.0
    fc: float = 2e9

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidConfigurationError(
                f"array needs at least one row and column, got ({self.rows}, {self.cols})")
        if self.polarizations not in (1, 2):
            raise InvalidConfigurationError(
                f"polarizations must be 1 or 2, got {self.polarizations}")
        if not self.spacing > 0:
            raise InvalidConfigurationError("element spacing must be positive")
        if not self.fc > 0:
            raise InvalidConfigurationError("carrier frequency must be positive")

    @property
    def elements_per_pol(self) -> int:
        return self.rows * self.cols

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols * self.polarizations

    @property
    def wavelength(self) -> float:
        return 299792458.0 / self.fc


@dataclass(frozen=True)
class PortMapping:
    """Assignment of physical elements to digitized antenna ports.

    ``members[k]`` lists the flat element indices driven by port ``k`` and
    ``phase_deg[k]`` / ``gain_db[k]`` hold the analog weight of each member.
    Ports are ordered ``(polarization, vertical, horizontal)``.
    """

    v: int
    h: int
    polarizations: int
    n_elements: int
    members: tuple
    phase_deg: tuple
    gain_db: tuple

    @property
    def n_ports(self) -> int:
        return len(self.members)

    @property
    def elements_per_port(self) -> int:
        return len(self.members[0])

    def combining_matrix(self) -> np.ndarray:
        """Element-to-port virtualization matrix, shape ``(n_elements, n_ports)``.

        Each column holds the analog weights of one port normalized to unit
        norm, so a unit-power digital stream radiates unit total power.
        """
        a = np.zeros((self.n_elements, self.n_ports), dtype=complex)
        for k, idx in enumerate(self.members):
            amp = 10.0 ** (np.asarray(self.gain_db[k]) / 20.0)
            w = amp * np.exp(1j * np.deg2rad(np.asarray(self.phase_deg[k])))
            a[list(idx), k] = w / np.linalg.norm(w)
        return a

    def with_analog_weights(self, phase_deg, gain_db=None) -> "PortMapping":
        """Return a copy whose analog weights are taken per element.

        ``phase_deg`` and ``gain_db`` are indexed by flat element index.
        """
        phase_deg = np.broadcast_to(np.asarray(phase_deg, dtype=float), (self.n_elements,))
        gain = np.zeros(self.n_elements) if gain_db is None else np.broadcast_to(
            np.asarray(gain_db, dtype=float), (self.n_elements,))
        return PortMapping(
            self.v, self.h, self.polarizations, self.n_elements, self.members,
            tuple(tuple(float(phase_deg[i]) for i in m) for m in self.members),
            tuple(tuple(float(gain[i]) for i in m) for m in self.members),
        )


def map_ports_to_elements(cfg: ArrayConfig, v: int, h: int) -> PortMapping:
    """Group contiguous blocks of ``M/v`` rows by ``N/h`` columns into ports.

    Raises
    ------
    InvalidConfigurationError
        If ``v`` does not divide ``M`` or ``h`` does not divide ``N``.
    """
    if v < 1 or h < 1 or cfg.rows % v or cfg.cols % h:
        raise InvalidConfigurationError(
            f"port grid ({v},{h}) does not evenly divide the ({cfg.rows},{cfg.cols}) array")
    mr, nc = cfg.rows // v, cfg.cols // h
    members = []
    for p in range(cfg.polarizations):
        base = p * cfg.elements_per_pol
        for vi in range(v):
            for hi in range(h):
                members.append(tuple(
                    base + m * cfg.cols + n
                    for m in range(vi * mr, (vi + 1) * mr)
                    for n in range(hi * nc, (hi + 1) * nc)))
    zeros = tuple((0.0,) * (mr * nc) for _ in members)
    return PortMapping(v, h, cfg.polarizations, cfg.n_elements, tuple(members), zeros, zeros)


def steering_vector(cfg: ArrayConfig, azimuth, elevation) -> np.ndarray:
    """Unit-modulus response of one polarization of the array.

    Angles are in degrees and broadcast against each other; the returned
    array has shape ``broadcast_shape + (M*N,)``. The phase of element
    ``(m, n)`` is ``2*pi*d*(n*sin(az)*cos(el) + m*sin(el))``.
    """
    az = np.deg2rad(np.asarray(azimuth, dtype=float))
    el = np.deg2rad(np.asarray(elevation, dtype=float))
    if np.any(np.abs(az) > np.pi / 2 + 1e-12) or np.any(np.abs(el) > np.pi / 2 + 1e-12):
        raise InvalidInputError("steering angles must lie within [-90, 90] degrees")
    az, el = np.broadcast_arrays(az, el)
    m = np.arange(cfg.rows)
    n = np.arange(cfg.cols)
    u = (np.sin(az) * np.cos(el))[..., None, None]
    w = np.sin(el)[..., None, None]
    phase = 2 * np.pi * cfg.spacing * (n[None, :] * u + m[:, None] * w)
    return np.exp(1j * phase).reshape(az.shape + (cfg.rows * cfg.cols,))


def array_factor(cfg: ArrayConfig, weights, azimuth, elevation) -> np.ndarray | float:
    """Array gain ``20*log10|w^H a(az, el)|`` in dB relative to one element.

    Returns ``-inf`` at an exact null.
    """
    w = np.asarray(weights, dtype=complex).ravel()
    if w.size == 0:
        raise InvalidInputError("weights must not be empty")
    if w.size != cfg.elements_per_pol:
        raise InvalidInputError(
            f"expected {cfg.elements_per_pol} weights, got {w.size}")
    a = steering_vector(cfg, azimuth, elevation)
    mag = np.abs(a @ w.conj())
    with np.errstate(divide="ignore"):
        out = 20 * np.log10(mag)
    return float(out) if np.ndim(out) == 0 else out


def null_depth_from_phase_error(rms_phase_deg: float, exact: bool = False) -> float:
    """Depth (dB below peak) of a zero-forced null under random phase errors.

    The default is the small-angle form ``10*log10(sigma^2)``. With
    ``exact=True`` the expectation ``E|exp(j*eps) - 1|^2 = 2*(1 - exp(-sigma^2/2))``
    is used instead. Zero error returns ``-inf`` (perfect null).
    """
    if rms_phase_deg < 0:
        raise InvalidInputError("RMS phase error must be non-negative")
    if rms_phase_deg == 0:
        return -math.inf
    s = math.radians(rms_phase_deg)
    residual = 2.0 * (1.0 - math.exp(-s * s / 2.0)) if exact else s * s
    return 10.0 * math.log10(residual)
