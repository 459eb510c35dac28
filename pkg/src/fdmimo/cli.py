"""Command-line front end: configuration ingestion, subcommands and result files.

Every subcommand writes its CSV, the resolved configuration it ran with and
a ``manifest.json`` into ``--out-dir``. Exit codes: 0 success, 2
configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .array import ArrayConfig, array_factor, null_depth_from_phase_error, steering_vector
from .calibration import calibration_scheduler, drift_since_calibration
from .errors import FdmimoError, InvalidConfigurationError
from .impairments import (
    ARCHITECTURES,
    LoOscillatorParams,
    TemperatureModel,
    generate_temperature_trace,
    lo_architecture_rms_error,
)
from .rng import substream
from .sim import (
    MAG_GRID_DB,
    PHASE_GRID_DEG,
    PORT_SWEEP,
    SimConfig,
    compare_single_vs_multi_cell,
    run_sweep,
)

__all__ = ["parse_config", "config_hash", "format_number", "dispatch", "main", "SUBCOMMANDS",
           "SWEEP_HEADER", "LO_HEADER"]

log = logging.getLogger(__name__)

DEFAULT_SEED = 1
SIG_DIGITS = 9
SUBCOMMANDS = ("sweep-phase", "sweep-magnitude", "zf-vs-mf", "single-vs-multi",
               "lo-analysis", "null-depth", "calib-sim", "pattern")
SWEEP_HEADER = ["duplex", "precoder", "v_ports", "h_ports", "total_ports", "rms_phase_deg",
                "rms_mag_db", "mean_cell_tput_mbps", "ci95_mbps", "su_fraction", "n_drops",
                "n_ttis", "seed"]
LO_HEADER = ["architecture", "fc_hz", "adev", "tau_s", "phase_var_rad2", "rms_phase_deg"]
ZF_MF_PHASE_GRID = (0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0)

_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}
_TUPLE_FIELDS = {"port_configs", "phase_grid_deg", "mag_grid_db", "ue_height_range"}


# ---------------------------------------------------------------- configuration

def _load(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomli
        except ImportError as exc:
            raise InvalidConfigurationError("TOML configs need the 'tomli' package") from exc
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfigurationError(f"{path}: {exc}") from exc
    else:
        if not text.strip():
            return {}
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfigurationError(
                f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigurationError(f"{path}: top level must be an object")
    return data


def parse_config(path=None, overrides: dict | None = None) -> tuple[SimConfig, set]:
    """Build a :class:`SimConfig` from a JSON (or TOML) file plus overrides.

    Returns the config and the set of keys given explicitly (file or
    overrides), which subcommands use to decide whether to apply their own
    sweep defaults. Absent keys take the reference-scenario defaults of
    :class:`SimConfig`; a missing seed becomes ``DEFAULT_SEED``.
    """
    data = {} if path is None else _load(Path(path))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise InvalidConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
    explicit = set(data)
    data.setdefault("seed", DEFAULT_SEED)
    for key in _TUPLE_FIELDS & set(data):
        value = data[key]
        if not isinstance(value, (list, tuple)):
            raise InvalidConfigurationError(f"{key} must be a list")
        data[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    try:
        cfg = SimConfig(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfigurationError):
            raise
        raise InvalidConfigurationError(str(exc)) from exc
    return cfg, explicit


def config_hash(cfg: SimConfig) -> str:
    """SHA-256 over the canonical JSON of every resolved field."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- output

def format_number(x) -> str:
    """Fixed 9-significant-digit rendering used for every numeric CSV cell."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return format(int(x), f".{SIG_DIGITS}g") if abs(int(x)) < 10**SIG_DIGITS else str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    out = format(x, f".{SIG_DIGITS}g")
    return "0" if out == "-0" else out


def _write_csv(path: Path, header: list, rows: list):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else format_number(v) for v in row])


def _sweep_rows(result) -> list:
    return [[p.duplex, p.precoder, p.v_ports, p.h_ports, p.total_ports, p.rms_phase_deg,
             p.rms_mag_db, p.mean_cell_tput_mbps, p.ci95_mbps, p.su_fraction, p.n_drops,
             p.n_ttis, p.seed] for p in result.points]


def _write_manifest(out: Path, sub: str, cfg: SimConfig, outputs: list, extra: dict | None = None):
    resolved = out / "resolved_config.json"
    resolved.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = {
        "subcommand": sub,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.seed,
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "outputs": [p.name for p in outputs] + [resolved.name],
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- subcommands

def _with_defaults(cfg: SimConfig, explicit: set, **defaults) -> SimConfig:
    return dataclasses.replace(cfg, **{k: v for k, v in defaults.items() if k not in explicit})


def _cmd_sweep_phase(cfg, explicit, args, out):
    cfg = _with_defaults(cfg, explicit, phase_grid_deg=PHASE_GRID_DEG, port_configs=PORT_SWEEP)
    res = run_sweep(cfg, args.workers)
    path = out / "sweep_phase.csv"
    _write_csv(path, SWEEP_HEADER, _sweep_rows(res))
    return cfg, [path], {}


def _cmd_sweep_magnitude(cfg, explicit, args, out):
    cfg = _with_defaults(cfg, explicit, mag_grid_db=MAG_GRID_DB, port_configs=PORT_SWEEP)
    res = run_sweep(cfg, args.workers)
    path = out / "sweep_magnitude.csv"
    _write_csv(path, SWEEP_HEADER, _sweep_rows(res))
    return cfg, [path], {}


def _cmd_zf_vs_mf(cfg, explicit, args, out):
    cfg = _with_defaults(cfg, explicit, duplex="TDD", port_configs=((4, 4),),
                         phase_grid_deg=ZF_MF_PHASE_GRID, mag_grid_db=(1.0,))
    rows = []
    for precoder in ("zf", "mf"):
        rows += _sweep_rows(run_sweep(dataclasses.replace(cfg, precoder=precoder), args.workers))
    path = out / "zf_vs_mf.csv"
    _write_csv(path, SWEEP_HEADER, rows)
    return cfg, [path], {}


def _cmd_single_vs_multi(cfg, explicit, args, out):
    cfg = _with_defaults(cfg, explicit, port_configs=((4, 4),), phase_grid_deg=PHASE_GRID_DEG)
    pair = compare_single_vs_multi_cell(cfg, args.workers)
    rows = []
    for name, res in (("single", pair.single), ("multi", pair.multi)):
        for row, p in zip(_sweep_rows(res), res.points):
            ref = res.point(p.v_ports, p.h_ports, cfg.phase_grid_deg[0], p.rms_mag_db)
            norm = p.mean_cell_tput_mbps / ref.mean_cell_tput_mbps
            rows.append([name, res.config.n_sites] + row + [norm])
    path = out / "single_vs_multi.csv"
    _write_csv(path, ["scenario", "n_sites"] + SWEEP_HEADER + ["normalized_tput"], rows)
    return cfg, [path], {}


def _cmd_lo_analysis(cfg, explicit, args, out):
    params = LoOscillatorParams(fc=cfg.fc, adev=args.adev)
    rows = []
    for arch in args.architectures:
        for tau in args.tau:
            rms = lo_architecture_rms_error(arch, tau, params)
            rows.append([arch, params.fc, params.adev, tau, math.radians(rms) ** 2, rms])
    path = out / "lo_analysis.csv"
    _write_csv(path, LO_HEADER, rows)
    return cfg, [path], {}


def _cmd_null_depth(cfg, explicit, args, out):
    rows = [[g, null_depth_from_phase_error(g, exact=args.exact)] for g in args.grid]
    path = out / "null_depth.csv"
    _write_csv(path, ["rms_phase_deg", "null_depth_db"], rows)
    return cfg, [path], {"exact": bool(args.exact)}


def _cmd_calib_sim(cfg, explicit, args, out):
    model = TemperatureModel()
    trace = generate_temperature_trace(model, args.hours * 3600.0, args.chains,
                                       substream(cfg.seed, 0, "calib-sim"))
    sched = calibration_scheduler(trace, args.threshold, args.interval)
    on = drift_since_calibration(trace, sched, model, "tx")
    off = drift_since_calibration(trace, None, model, "tx")
    n_events = np.zeros(trace.times_s.size, dtype=int)
    for t, _, _ in sched.events:
        n_events[min(np.searchsorted(trace.times_s, t, side="right") - 1, n_events.size - 1)] += 1
    rows = []
    for k, t in enumerate(trace.times_s):
        rows.append([t, float(np.ptp(trace.temps_c[k])),
                     float(np.ptp(on[0][k])), float(np.ptp(on[1][k])),
                     float(np.ptp(off[0][k])), float(np.ptp(off[1][k])), n_events[k]])
    path = out / "calib_sim.csv"
    _write_csv(path, ["time_s", "temp_spread_c", "pair_phase_cal_deg", "pair_gain_cal_db",
                      "pair_phase_nocal_deg", "pair_gain_nocal_db", "n_events"], rows)
    summary = {
        "events": len(sched.events),
        "worst_pair_phase_cal_deg": float(np.max(np.ptp(on[0], axis=1))),
        "worst_pair_gain_cal_db": float(np.max(np.ptp(on[1], axis=1))),
        "worst_pair_phase_nocal_deg": float(np.max(np.ptp(off[0], axis=1))),
        "worst_pair_gain_nocal_db": float(np.max(np.ptp(off[1], axis=1))),
    }
    return cfg, [path], summary


def _cmd_pattern(cfg, explicit, args, out):
    arr = ArrayConfig(cfg.rows, cfg.cols, 1, cfg.spacing, cfg.element_gain_dbi, cfg.fc)
    w = steering_vector(arr, args.steer_az, args.steer_el)
    rng = substream(cfg.seed, 0, "pattern")
    w_err = w * np.exp(1j * np.radians(args.rms_phase * rng.standard_normal(w.size)))
    grid = np.arange(-90.0, 90.0 + 1e-9, args.step)
    rows = []
    for cut, az, el in (("azimuth", grid, np.full_like(grid, args.steer_el)),
                        ("elevation", np.full_like(grid, args.steer_az), grid)):
        ideal = np.atleast_1d(array_factor(arr, w, az, el))
        impaired = np.atleast_1d(array_factor(arr, w_err, az, el))
        rows += [[cut, a, e, g0, g1] for a, e, g0, g1 in zip(az, el, ideal, impaired)]
    path = out / "pattern.csv"
    _write_csv(path, ["cut", "azimuth_deg", "elevation_deg", "gain_db", "gain_impaired_db"], rows)
    return cfg, [path], {}


_HANDLERS = {
    "sweep-phase": _cmd_sweep_phase,
    "sweep-magnitude": _cmd_sweep_magnitude,
    "zf-vs-mf": _cmd_zf_vs_mf,
    "single-vs-multi": _cmd_single_vs_multi,
    "lo-analysis": _cmd_lo_analysis,
    "null-depth": _cmd_null_depth,
    "calib-sim": _cmd_calib_sim,
    "pattern": _cmd_pattern,
}


def dispatch(subcommand: str, cfg: SimConfig, args: argparse.Namespace,
             explicit: set | None = None) -> list:
    """Run one subcommand and write its artifacts; returns the CSV paths."""
    if subcommand not in _HANDLERS:
        raise InvalidConfigurationError(f"unknown subcommand {subcommand!r}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg, paths, extra = _HANDLERS[subcommand](cfg, explicit or set(), args, out)
    _write_manifest(out, subcommand, cfg, paths, extra)
    return paths


# ---------------------------------------------------------------- entry point

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON (or .toml) configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", default=".", help="directory for CSV and manifest")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel drop workers (capped by FDMIMO_MAX_WORKERS)")
    common.add_argument("--drops", type=int, help="Monte-Carlo drops")
    common.add_argument("--sites", type=int, choices=(1, 7, 19), help="number of sites")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fdmimo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)
    for name in ("sweep-phase", "sweep-magnitude", "zf-vs-mf", "single-vs-multi"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("lo-analysis", parents=[common])
    p.add_argument("--architectures", nargs="+", default=["SLO"], choices=ARCHITECTURES)
    p.add_argument("--tau", nargs="+", type=float, default=[1e-3], help="elapsed time (s)")
    p.add_argument("--adev", type=float, default=1e-9)
    p = sub.add_parser("null-depth", parents=[common])
    p.add_argument("--grid", nargs="+", type=float, default=[3.0, 20.0], help="RMS phase (deg)")
    p.add_argument("--exact", action="store_true", help="use the exact expectation")
    p = sub.add_parser("calib-sim", parents=[common])
    p.add_argument("--chains", type=int, default=48)
    p.add_argument("--hours", type=float, default=24.0)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--interval", type=float, default=1800.0)
    p = sub.add_parser("pattern", parents=[common])
    p.add_argument("--steer-az", type=float, default=0.0)
    p.add_argument("--steer-el", type=float, default=0.0)
    p.add_argument("--rms-phase", type=float, default=0.0)
    p.add_argument("--step", type=float, default=1.0)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = parse_config(args.config, {"seed": args.seed, "n_drops": args.drops,
                                                   "n_sites": args.sites})
        if args.workers < 1:
            raise InvalidConfigurationError("--workers must be >= 1")
        paths = dispatch(args.subcommand, cfg, args, explicit)
    except InvalidConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FdmimoError, OSError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
