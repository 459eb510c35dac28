"""Acceptance criteria at their stated tolerances and desk scale.

The heavy criteria run the command-line tool on a 7-site network with 30
drops of 100 TTIs. ``FDMIMO_ACCEPTANCE_DROPS`` lowers the drop count for a
quick smoke run; verdicts are only meaningful at the default.
"""

import csv
import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from fdmimo.array import ArrayConfig, null_depth_from_phase_error, steering_vector
from fdmimo.calibration import RfChainResponse, apply_relative_calibration_to_csi, relative_coefficients
from fdmimo.cli import main
from fdmimo.impairments import (
    allan_phase_error_variance,
    integrated_phase_noise_variance,
    required_allan_deviation,
    wiener_phase_error_variance,
)
from fdmimo.precoding import mmse_combiner, zf_precoder
from fdmimo.sim import PHASE_GRID_DEG, SimConfig, compare_single_vs_multi_cell, run_sweep

SEED = 1
DROPS = int(os.environ.get("FDMIMO_ACCEPTANCE_DROPS", "30"))
DESK = {"seed": SEED, "n_sites": 7, "n_drops": DROPS, "n_ttis": 100}
ALL_PORTS = (4, 8, 16, 32)


def record(log, n, ok, detail):
    log.append((f"criterion {n}", bool(ok), detail))


def run_cli(tmp, name, sub, workers=1, **cfg):
    out = tmp / name
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps({**DESK, **cfg}))
    assert main([sub, "--config", str(path), "--out-dir", str(out), "--workers", str(workers)]) == 0
    return out


def load_sweep(path):
    """``{(total_ports, rms_phase_deg, rms_mag_db): (mean, su_fraction)}`` plus extra columns."""
    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["total_ports"]), float(row["rms_phase_deg"]), float(row["rms_mag_db"]))
            table[(row.get("scenario"), row["precoder"]) + key] = (
                float(row["mean_cell_tput_mbps"]), float(row["su_fraction"]))
    return table


def curve(table, ports, axis, grid, prefix=(None,)):
    keys = [prefix + ((ports, g, 0.0) if axis == "phase" else (ports, 0.0, g)) for g in grid]
    return np.array([table[k][0] for k in keys]), np.array([table[k][1] for k in keys])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    os.environ.pop("FDMIMO_MAX_WORKERS", None)
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def phase_fdd(workdir):
    out = run_cli(workdir, "phase_fdd", "sweep-phase", duplex="FDD")
    return out / "sweep_phase.csv"


@pytest.fixture(scope="module")
def phase_tdd(workdir):
    out = run_cli(workdir, "phase_tdd", "sweep-phase", duplex="TDD")
    return out / "sweep_phase.csv"


@pytest.fixture(scope="module")
def magnitude(workdir):
    return {d: load_sweep(run_cli(workdir, f"mag_{d}", "sweep-magnitude", duplex=d) / "sweep_magnitude.csv")
            for d in ("FDD", "TDD")}


# ---------------------------------------------------------------- closed forms

def test_criterion_1_lo_closed_forms(acceptance_log):
    ts = 1 / 30.72e6
    wiener = wiener_phase_error_variance(integrated_phase_noise_variance(-40), 1e-3, ts)
    wiener_rms = math.degrees(math.sqrt(wiener))
    allan = allan_phase_error_variance(2e9, 1e-9, 1e-3)
    allan_rms = math.degrees(math.sqrt(allan))
    adev = required_allan_deviation(2e9, 10.0)
    rms60 = math.degrees(math.sqrt(wiener_phase_error_variance(integrated_phase_noise_variance(-60), 1e-3, ts)))
    checks = [
        math.isclose(wiener, 3.072, rel_tol=1e-12),
        99.0 <= wiener_rms <= 100.5,
        abs(allan - 157.91) <= 0.01,
        abs(allan_rms - 720.0) <= 1.0,
        abs(adev - 1.389e-11) <= 1e-14,
        abs(rms60 - 10.04) <= 0.1,
    ]
    detail = (f"Wiener {wiener:.4f} rad2 ({wiener_rms:.2f} deg), Allan {allan:.3f} rad2 "
              f"({allan_rms:.1f} deg), adev {adev:.4e}, -60 dBc {rms60:.3f} deg")
    record(acceptance_log, 1, all(checks), detail)
    assert all(checks), detail


def _null_residual_db(sigma_deg, trials, rng):
    cfg = ArrayConfig(12, 4, 1)
    peak = steering_vector(cfg, 0.0, 0.0)
    null = steering_vector(cfg, 25.0, 5.0)
    # beam toward boresight with a zero forced toward (25, 5)
    w = peak - null * (np.vdot(null, peak) / np.vdot(null, null))
    assert abs(np.vdot(w, null)) < 1e-9
    total = 0.0
    for _ in range(trials // 10**4):
        eps = np.radians(sigma_deg) * rng.standard_normal((10**4, w.size))
        total += np.sum(np.abs((w * np.exp(1j * eps)).conj() @ null) ** 2)
    return 10 * math.log10(total / trials / np.sum(np.abs(w) ** 2))


def test_criterion_2_null_depth(acceptance_log):
    d3, d20 = null_depth_from_phase_error(3.0), null_depth_from_phase_error(20.0)
    rng = np.random.default_rng(SEED)
    mc = {s: _null_residual_db(s, 10**5, rng) for s in (3.0, 10.0, 20.0)}
    gaps = {s: abs(mc[s] - null_depth_from_phase_error(s)) for s in mc}
    ok = abs(d3 + 25.62) <= 0.01 and abs(d20 + 9.14) <= 0.01 and max(gaps.values()) <= 0.5
    detail = (f"3 deg {d3:.4f} dB, 20 deg {d20:.4f} dB, Monte-Carlo gaps "
              + ", ".join(f"{s:g} deg {g:.3f} dB" for s, g in gaps.items()))
    record(acceptance_log, 2, ok, detail)
    assert ok, detail


def test_criterion_3_calibration_algebra(acceptance_log):
    rng = np.random.default_rng(SEED)

    def crandn(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    worst_var = 0.0
    for _ in range(1000):
        t, r, h = crandn(32), crandn(32), crandn(32)
        est = apply_relative_calibration_to_csi(r * h, relative_coefficients(RfChainResponse(t, r)))
        worst_var = max(worst_var, float(np.var(est / (t * h))))

    worst_rel = 0.0
    for _ in range(100):
        t, r = crandn(32), crandn(32)
        H = crandn(4, 2, 32)
        downlink = H * t
        sinrs = []
        for ref in (0, 7, 31):
            rows = apply_relative_calibration_to_csi((H * r)[:, 0, :], relative_coefficients(RfChainResponse(t, r), ref))
            W = zf_precoder(rows).W
            sinrs.append(np.concatenate([mmse_combiner(downlink[k] @ W, 0.1 * np.eye(2))[1] for k in range(4)]))
        for s in sinrs[1:]:
            worst_rel = max(worst_rel, float(np.max(np.abs(s - sinrs[0]) / sinrs[0])))
    ok = worst_var < 1e-20 and worst_rel <= 1e-9
    detail = f"max identity variance {worst_var:.2e}, max post-SINR change across reference {worst_rel:.2e}"
    record(acceptance_log, 3, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- system level

def test_criterion_4_phase_sweep_trends(phase_fdd, phase_tdd, acceptance_log):
    fdd, tdd = load_sweep(phase_fdd), load_sweep(phase_tdd)
    grid = PHASE_GRID_DEG
    parts, ok = [], True
    for name, table, pre in (("FDD", fdd, "codebook"), ("TDD-ZF", tdd, "zf")):
        curves = {p: curve(table, p, "phase", grid, (None, pre)) for p in ALL_PORTS}
        rho = {p: stats.spearmanr(grid, curves[p][0])[0] for p in ALL_PORTS}
        ok_a = all(r <= -0.95 for r in rho.values())
        m0 = {p: curves[p][0][0] for p in ALL_PORTS}
        ok_order = m0[32] >= m0[16] >= m0[8]
        loss20 = 1 - curves[32][0][grid.index(20.0)] / m0[32]
        floor = {p: abs(curves[p][0][grid.index(100.0)] / curves[p][0][grid.index(120.0)] - 1) for p in ALL_PORTS}
        su100 = {p: curves[p][1][grid.index(100.0)] for p in ALL_PORTS}
        ok_d = all(f <= 0.10 for f in floor.values()) and all(s > 0.9 for s in su100.values())
        lo, hi = (0.10, 0.30) if name == "TDD-ZF" else (0.0, 0.08)
        ok_c = lo <= loss20 <= hi
        part = (f"{name}: min rho {min(rho.values()):.3f}, 0-deg order 32>=16>=8 {ok_order}, "
                f"loss@20 {100 * loss20:.1f}%, floor gap max {100 * max(floor.values()):.1f}%, "
                f"SU@100 min {min(su100.values()):.2f}")
        ok_all = ok_a and ok_order and ok_c and ok_d
        if name == "FDD":
            g16, g32 = m0[16] / m0[8] - 1, m0[32] / m0[8] - 1
            ok_b = 0.10 <= g16 <= 0.30 and 0.13 <= g32 <= 0.37
            part += f", 16v8 +{100 * g16:.1f}%, 32v8 +{100 * g32:.1f}%"
            ok_all = ok_all and ok_b
        parts.append(part)
        ok = ok and ok_all
    detail = "; ".join(parts)
    record(acceptance_log, 4, ok, detail)
    assert ok, detail


def test_criterion_5_magnitude_sweep(magnitude, acceptance_log):
    parts, ok = [], True
    for duplex, table in magnitude.items():
        pre = "codebook" if duplex == "FDD" else "zf"
        grid = sorted({k[4] for k in table})
        c32 = dict(zip(grid, curve(table, 32, "mag", grid, (None, pre))[0]))
        c4 = dict(zip(grid, curve(table, 4, "mag", grid, (None, pre))[0]))
        ref16 = table[(None, pre, 16, 0.0, 0.0)][0]
        worse = all(c32[g] <= ref16 for g in grid if g >= 1.5)
        gaps = {g: (c32[g] - c4[g]) / c4[g] for g in grid if g >= 4.0}
        small = all(abs(x) <= 0.10 for x in gaps.values())
        parts.append(f"{duplex}: 32p<=16p(0 dB) for >=1.5 dB {worse}, 32v4 gap at 4/6/9 dB "
                     + "/".join(f"{100 * gaps[g]:+.1f}%" for g in sorted(gaps)))
        ok = ok and worse and small
    detail = "; ".join(parts)
    record(acceptance_log, 5, ok, detail)
    assert ok, detail


def test_criterion_6_zf_versus_mf(workdir, acceptance_log):
    table = load_sweep(run_cli(workdir, "zfmf", "zf-vs-mf") / "zf_vs_mf.csv")
    zf0, mf0 = table[(None, "zf", 32, 0.0, 1.0)][0], table[(None, "mf", 32, 0.0, 1.0)][0]
    zf120, mf120 = table[(None, "zf", 32, 120.0, 1.0)][0], table[(None, "mf", 32, 120.0, 1.0)][0]
    adv0, adv120 = (zf0 - mf0) / mf0, (zf120 - mf120) / mf120
    ok = zf0 > mf0 and adv120 <= adv0 / 3
    detail = f"ZF/MF advantage {100 * adv0:.1f}% at 0 deg, {100 * adv120:.1f}% at 120 deg"
    record(acceptance_log, 6, ok, detail)
    assert ok, detail


def test_criterion_7_single_versus_multi_cell(acceptance_log):
    parts, ok = [], True
    for duplex in ("FDD", "TDD"):
        cfg = SimConfig(**DESK, duplex=duplex, port_configs=((4, 4),), phase_grid_deg=PHASE_GRID_DEG)
        x, single, multi = compare_single_vs_multi_cell(cfg).normalized(4, 4)
        violations = [float(g) for g, s, m in zip(x[1:], single[1:], multi[1:]) if s > m]
        parts.append(f"{duplex}: {len(violations)} violation(s) {violations}, "
                     f"normalized@40 single {single[3]:.3f} multi {multi[3]:.3f}")
        ok = ok and len(violations) <= 1 and single[3] <= multi[3]
    detail = "; ".join(parts)
    record(acceptance_log, 7, ok, detail)
    assert ok, detail


def test_criterion_8_calibration_scheduler(workdir, acceptance_log):
    out = workdir / "calib"
    assert main(["calib-sim", "--out-dir", str(out), "--seed", str(SEED), "--chains", "48",
                 "--hours", "24", "--threshold", "3", "--interval", "1800"]) == 0
    s = json.loads((out / "manifest.json").read_text())
    on = (s["worst_pair_phase_cal_deg"], s["worst_pair_gain_cal_db"])
    off = (s["worst_pair_phase_nocal_deg"], s["worst_pair_gain_nocal_db"])
    ok = on[0] <= 6.0 and on[1] <= 0.6 and off[0] > 6.0 and off[1] > 0.6
    detail = (f"calibrated {on[0]:.2f} deg / {on[1]:.3f} dB, uncalibrated {off[0]:.2f} deg / "
              f"{off[1]:.3f} dB, {s['events']} events")
    record(acceptance_log, 8, ok, detail)
    assert ok, detail


def test_criterion_9_end_to_end_calibration(acceptance_log):
    base = SimConfig(**DESK, duplex="TDD", port_configs=((4, 4),))
    clean = run_sweep(base).points[0].mean_cell_tput_mbps
    on = run_sweep(replace(base, temperature_drift=True, calibration=True)).points[0].mean_cell_tput_mbps
    off = run_sweep(replace(base, temperature_drift=True, calibration=False)).points[0].mean_cell_tput_mbps
    ok = abs(on - clean) / clean <= 0.02 and off < clean
    detail = (f"drift-free {clean:.2f} Mbps, calibrated {on:.2f} ({100 * (on / clean - 1):+.2f}%), "
              f"uncalibrated {off:.2f} ({100 * (off / clean - 1):+.2f}%)")
    record(acceptance_log, 9, ok, detail)
    assert ok, detail


def test_criterion_10_determinism(workdir, phase_fdd, acceptance_log):
    again = run_cli(workdir, "phase_fdd_w8", "sweep-phase", workers=8, duplex="FDD") / "sweep_phase.csv"
    a, b = phase_fdd.read_bytes(), again.read_bytes()
    ok = a == b
    detail = f"workers 1 vs 8: {len(a)} bytes, identical {ok}"
    record(acceptance_log, 10, ok, detail)
    assert ok, detail
