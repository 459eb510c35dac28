"""Linear precoding, CSI feedback, MMSE reception and link adaptation.

Channel matrices follow the ``(receive, transmit)`` convention: a stacked
multi-user channel is ``users x ports`` and a precoder is ``ports x layers``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalConditioningError, SingularChannelError

__all__ = [
    "PrecoderMatrix",
    "Codebook",
    "CsiReport",
    "zf_precoder",
    "mf_precoder",
    "codebook_precoder",
    "build_codebook",
    "select_pmi_cqi",
    "cqi_from_sinr",
    "sinr_from_cqi",
    "mmse_combiner",
    "RoundRobinScheduler",
    "SwitchDecision",
    "expected_sinr",
    "su_mu_switch",
    "sinr_to_rate",
    "spectral_efficiency",
    "latest_report_time",
]

MAX_LAYERS = 4
SE_CAP = 6.0
SE_ATTENUATION = 0.75
SINR_FLOOR_DB = -6.5
CQI_LEVELS = 15


@dataclass(frozen=True)
class PrecoderMatrix:
    """Digital precoder ``W`` (ports x layers) with unit Frobenius norm."""

    W: np.ndarray
    power_shares: np.ndarray

    @property
    def n_layers(self) -> int:
        return self.W.shape[1]


def _finish(W: np.ndarray) -> PrecoderMatrix:
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0):
        raise SingularChannelError("a beam has zero norm", rank=int(np.sum(norms > 0)))
    W = W / norms
    k = W.shape[1]
    W = W / np.sqrt(k)
    return PrecoderMatrix(W, np.full(k, 1.0 / k))


def zf_precoder(H, rtol: float = 1e-10) -> PrecoderMatrix:
    """Zero forcing: right pseudo-inverse with equal per-layer power.

    Raises
    ------
    SingularChannelError
        If the stacked channel does not have full row rank.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    k, n = H.shape
    if k > n:
        raise SingularChannelError(f"{k} users exceed {n} ports", rank=n)
    s = np.linalg.svd(H, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    if rank < k:
        raise SingularChannelError(f"stacked channel has rank {rank} < {k}", rank=rank)
    W = H.conj().T @ np.linalg.inv(H @ H.conj().T)
    return _finish(W)


def mf_precoder(H) -> PrecoderMatrix:
    """Matched filter (conjugate beamforming), unit-norm columns, unit total power.

    Raises
    ------
    SingularChannelError
        If a user's channel row is all zero.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.shape[0] < 1:
        raise InvalidInputError("need at least one user")
    return _finish(H.conj().T)


def codebook_precoder(codewords) -> PrecoderMatrix:
    """Stack reported codewords as beams, one per user."""
    return _finish(np.asarray(codewords, dtype=complex).T)


@dataclass(frozen=True)
class Codebook:
    """Oversampled 2D-DFT beams, optionally co-phased across two polarizations.

    ``vectors[i]`` is codeword ``i`` over ports ordered
    ``(polarization, vertical, horizontal)``.
    """

    v: int
    h: int
    o_v: int
    o_h: int
    polarizations: int
    vectors: np.ndarray
    index: np.ndarray            # (i_v, i_h, i_cophase) per codeword

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_ports(self) -> int:
        return self.vectors.shape[1]


def build_codebook(v: int, h: int, oversampling: int = 4, polarizations: int = 2) -> Codebook:
    """Kronecker product of vertical and horizontal oversampled DFT vectors.

    A dimension with a single port gets no oversampling. With two
    polarizations every beam is repeated with QPSK co-phasing ``j**q``.
    """
    if v < 1 or h < 1 or oversampling < 1:
        raise InvalidInputError("v, h and oversampling must be >= 1")
    o_v = oversampling if v > 1 else 1
    o_h = oversampling if h > 1 else 1
    bv = np.exp(2j * np.pi * np.outer(np.arange(v * o_v), np.arange(v)) / (v * o_v))
    bh = np.exp(2j * np.pi * np.outer(np.arange(h * o_h), np.arange(h)) / (h * o_h))
    beams = np.einsum("ak,bl->abkl", bv, bh).reshape(v * o_v, h * o_h, v * h)
    cophase = [1.0] if polarizations == 1 else [1j**q for q in range(4)]
    vecs, idx = [], []
    for a in range(v * o_v):
        for b in range(h * o_h):
            for q, phi in enumerate(cophase):
                u = beams[a, b]
                w = u if polarizations == 1 else np.concatenate([u, phi * u])
                vecs.append(w / np.linalg.norm(w))
                idx.append((a, b, q))
    return Codebook(v, h, o_v, o_h, polarizations, np.array(vecs), np.array(idx))


def spectral_efficiency(sinr):
    """Truncated Shannon bound in bit/s/Hz: ``min(0.75*log2(1+sinr), 6)``, 0 below -6.5 dB."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise InvalidInputError("SINR must be non-negative")
    se = np.minimum(SE_ATTENUATION * np.log2(1.0 + sinr), SE_CAP)
    se = np.where(sinr < 10 ** (SINR_FLOOR_DB / 10), 0.0, se)
    return float(se) if se.ndim == 0 else se


def sinr_to_rate(sinr, bandwidth_hz: float):
    """Throughput in bit/s for a linear SINR over ``bandwidth_hz``."""
    return spectral_efficiency(sinr) * bandwidth_hz


def cqi_from_sinr(sinr, levels: int = CQI_LEVELS):
    """Uniform spectral-efficiency quantizer; CQI 0 means out of range."""
    se = spectral_efficiency(sinr)
    return np.floor(np.asarray(se) / SE_CAP * levels + 1e-9).astype(int)


def sinr_from_cqi(cqi, levels: int = CQI_LEVELS):
    """Lowest linear SINR whose spectral efficiency reaches the CQI level."""
    se = np.asarray(cqi, dtype=float) * SE_CAP / levels
    return np.where(se > 0, 2.0 ** (se / SE_ATTENUATION) - 1.0, 0.0)


@dataclass
class CsiReport:
    """One CSI report. ``channel`` holds the per-port estimate for SRS reports."""

    kind: str                    # "pmi" or "srs"
    created_ms: int = 0
    pmi: int | None = None
    cqi: int | None = None
    sinr: float | None = None
    channel: np.ndarray | None = field(default=None, repr=False)


def latest_report_time(t_ms: int, period_ms: int = 5, delay_ms: int = 6) -> int:
    """Creation time of the freshest report usable at TTI ``t_ms``.

    Reports are created on the ``period_ms`` grid and become usable
    ``delay_ms`` later. The result can be negative (reports from before the
    observation window).
    """
    return ((t_ms - delay_ms) // period_ms) * period_ms


def _whiten(H, noise):
    noise = np.asarray(noise, dtype=complex if np.iscomplexobj(noise) else float)
    if noise.ndim == 0:
        return H / np.sqrt(float(noise))
    L = np.linalg.cholesky(noise)
    return np.linalg.solve(L, H)


def select_pmi_cqi(H_est, cb: Codebook, noise, created_ms: int = 0) -> CsiReport:
    """Pick the codeword maximizing the post-MMSE SINR ``w^H H^H R^-1 H w``.

    ``noise`` is a scalar noise power or an interference-plus-noise
    covariance. Ties resolve to the lowest index.
    """
    H_est = np.atleast_2d(np.asarray(H_est, dtype=complex))
    if H_est.shape[1] != cb.n_ports:
        raise InvalidInputError(
            f"channel has {H_est.shape[1]} ports, codebook has {cb.n_ports}")
    G = _whiten(H_est, noise)
    metric = np.sum(np.abs(G @ cb.vectors.T) ** 2, axis=0)
    pmi = int(np.argmax(metric))
    sinr = float(metric[pmi])
    return CsiReport("pmi", created_ms, pmi, int(cqi_from_sinr(sinr)), sinr)


def mmse_combiner(H_eff, cov):
    """Linear MMSE receive weights and per-layer post-combining SINR.

    ``H_eff`` is the effective (precoded) channel, receive antennas x
    layers; ``cov`` the covariance of everything that is not one of these
    layers (inter-cell interference plus noise).
    """
    H = np.atleast_2d(np.asarray(H_eff, dtype=complex))
    if H.shape[0] == 1 and np.ndim(H_eff) == 1:
        H = H.T
    R = np.atleast_2d(np.asarray(cov, dtype=complex))
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError("interference covariance is not positive definite") from exc
    total = H @ H.conj().T + R
    W = np.linalg.solve(total, H)
    sinr = np.empty(H.shape[1])
    for l in range(H.shape[1]):
        h = H[:, l]
        s = np.real(h.conj() @ W[:, l])
        # (A + hh^H)^-1 h = A^-1 h / (1 + h^H A^-1 h)
        sinr[l] = s / max(1.0 - s, 1e-300)
    return W, sinr


class RoundRobinScheduler:
    """Deterministic rotation over one cell's users, up to ``max_layers`` per TTI."""

    def __init__(self, users, max_layers: int = MAX_LAYERS):
        self.users = list(users)
        self.max_layers = max_layers
        self.pointer = 0

    def next(self) -> list:
        n = len(self.users)
        if n == 0:
            return []
        k = min(self.max_layers, n)
        out = [self.users[(self.pointer + i) % n] for i in range(k)]
        self.pointer = (self.pointer + k) % n
        return out


def _beam_powers(rows, W):
    return np.abs(rows @ W) ** 2, (np.abs(rows) ** 2) @ (np.abs(W) ** 2)


def _sinr_from_powers(A, B, eta, kappa):
    E = kappa * A + (1.0 - kappa) * B
    sig = np.diag(E).copy()
    return sig / (np.asarray(eta, dtype=float) + E.sum(axis=1) - sig)


def expected_sinr(rows, W, eta, kappa: float = 1.0) -> np.ndarray:
    """Per-user SINR averaged over random per-port transmit errors.

    With a coherence factor ``kappa`` the expected received power of beam
    ``w`` at channel ``h`` is ``kappa*|h w|^2 + (1-kappa)*sum_p |h_p|^2 |w_p|^2``.
    ``rows`` (users x ports) and ``eta`` (noise plus inter-cell interference)
    are in the same power units.
    """
    return _sinr_from_powers(*_beam_powers(rows, W), eta, kappa)


@dataclass
class SwitchDecision:
    mode: str                    # "SU" or "MU"
    users: list
    W: np.ndarray
    est_rate: float              # bit/s/Hz


def su_mu_switch(users, rows, eta, precoder: str = "zf", codewords=None,
                 kappa: float = 1.0, cache: dict | None = None) -> SwitchDecision:
    """Choose between SU transmission and MU transmission to a subset of ``users``.

    ``rows`` are the per-user channel rows the precoder is built from (the
    stale CSI). Rates are truncated-Shannon estimates of
    :func:`expected_sinr`. Starting from the full set, users are removed
    greedily (each step drops the user whose removal maximizes the
    estimated sum rate); the best set seen wins, SU included. A
    rank-deficient ZF set is never chosen. ``cache`` may map tuples of
    user ids to precoders (and their beam powers) built from the same rows.
    """
    users = list(users)
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    eta = np.asarray(eta, dtype=float)

    def build(idx):
        if precoder == "zf":
            return zf_precoder(rows[idx]).W
        if precoder == "mf":
            return mf_precoder(rows[idx]).W
        if precoder == "codebook":
            return codebook_precoder(np.asarray(codewords)[idx]).W
        raise InvalidInputError(f"unknown precoder {precoder!r}")

    def evaluate(idx):
        key = tuple(users[i] for i in idx)
        entry = cache.get(key) if cache is not None else None
        if entry is None:
            try:
                W = build(idx)
                entry = (W, *_beam_powers(rows[idx], W))
            except SingularChannelError:
                entry = (None, None, None)
            if cache is not None:
                cache[key] = entry
        W, A, B = entry
        if W is None:
            return -np.inf, None
        rate = float(np.sum(spectral_efficiency(_sinr_from_powers(A, B, eta[idx], kappa))))
        return rate, W

    su = []
    for i in range(len(users)):
        rate, W = evaluate([i])
        su.append((rate, W))
    best_i = int(np.argmax([r for r, _ in su]))
    best = SwitchDecision("SU", [users[best_i]], su[best_i][1], su[best_i][0])

    idx = list(range(len(users)))
    rate, W = evaluate(idx) if len(idx) > 1 else (-np.inf, None)
    while len(idx) > 1:
        if W is not None and rate > best.est_rate:
            best = SwitchDecision("MU", [users[i] for i in idx], W, rate)
        if len(idx) == 2:
            break
        trials = [evaluate(idx[:j] + idx[j + 1:]) for j in range(len(idx))]
        j = int(np.argmax([r for r, _ in trials]))
        idx = idx[:j] + idx[j + 1:]
        rate, W = trials[j]
    return best
