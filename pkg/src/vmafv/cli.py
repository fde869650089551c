"""Command-line front end.

Exit codes: 0 success, 1 numerical failure (fit did not converge),
2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import csvio
from .analysis import build_fv_curve, synchronize
from .catalog import read_catalog
from .csvio import SchemaError
from .fitting import FitError, fit_curve
from .protocol import ProtocolConfig, build_protocol, ramp_schedule
from .slse import NormalizedSlse
from .sweep import SweepSpec, analytic_fv_rows, fv_header, run_sweep, velocity_grid
from .timesim import add_noise, simulate

log = logging.getLogger("vmafv")

CONFIG_DIR_ENV = "VMAFV_CONFIG_DIR"
CONFIG_NAME = "vmafv.json"

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_json(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}:1: expected a JSON object")
    return doc, text


def _line_of(text: str, key: str) -> int:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def _validation(path, text, exc: Exception) -> UsageError:
    msg = str(exc)
    key = msg.split(":", 1)[0].strip()
    return UsageError(f"{path}:{_line_of(text, key)}: {msg}")


def load_settings(path: str | None) -> dict:
    """Global settings file: ``--config`` or ``$VMAFV_CONFIG_DIR/vmafv.json``."""
    if path is None:
        cfg_dir = os.environ.get(CONFIG_DIR_ENV)
        if not cfg_dir:
            return {}
        candidate = Path(cfg_dir) / CONFIG_NAME
        if not candidate.exists():
            return {}
        path = str(candidate)
    return _load_json(path)[0]


def protocol_from_file(path, overrides: dict | None = None) -> ProtocolConfig:
    doc, text = _load_json(path)
    data = dict(overrides or {})
    data.update(doc)
    data.pop("actuator", None)
    data.pop("catalog", None)
    if "actuator" in doc:
        catalog = read_catalog(doc.get("catalog", "table1"))
        if doc["actuator"] not in catalog:
            raise UsageError(f"{path}:{_line_of(text, 'actuator')}: unknown actuator {doc['actuator']!r}")
        rec = catalog[doc["actuator"]]
        pressure = float(data.get("pressure", 20.0))
        data.setdefault("rest_length_unpressurized", rec.il)
        data.setdefault("rest_length_pressurized", rec.rest_length(pressure))
    if "extension" not in data and float(data.get("pressure", 20.0)) <= 5.0:
        data["extension"] = 1.0
    try:
        return ProtocolConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise _validation(path, text, exc) from None


def _say(args, msg):
    if not args.quiet:
        print(msg)


# -- commands -----------------------------------------------------------------


def cmd_protocol(args, settings) -> int:
    cfg = protocol_from_file(args.config_file, settings.get("protocol"))
    profile = build_protocol(cfg)
    csvio.write_profile(args.out, profile)
    ramps = ramp_schedule(cfg)
    _say(args, f"segments={len(profile.durations)} ramps={len(ramps)} "
               f"ramps_per_repetition={len(ramps) // cfg.repetitions} "
               f"extension_mm={cfg.extension:g} duration_s={profile.duration:.6g}")
    return EXIT_OK


def cmd_simulate(args, settings) -> int:
    doc = csvio.read_params(args.params)
    chain = csvio.dimensional_from_params(doc)
    profile = csvio.read_profile(args.profile)
    meta = {k: v for k, v in (("pressure_psi", doc.get("pressure_psi")),) if v is not None}
    trace = simulate(chain, profile, metadata=meta)
    noise = args.noise if args.noise is not None else float(settings.get("noise", 0.0))
    if noise < 0:
        raise UsageError("--noise must be non-negative")
    if noise > 0:
        trace = add_noise(trace, noise, args.seed)
    csvio.write_trace(args.out, trace)
    i = int(np.argmax(trace.force))
    _say(args, f"samples={len(trace)} peak_force_N={float(trace.force[i])!r} at t={float(trace.time[i])!r}")
    return EXIT_OK


def cmd_analyze(args, settings) -> int:
    catalog = read_catalog(args.catalog)
    if args.actuator not in catalog:
        raise UsageError(f"unknown actuator id {args.actuator!r}; known: {', '.join(sorted(catalog))}")
    rec = catalog[args.actuator]
    trace = csvio.read_trace(args.trace)
    pressure = float(trace.metadata.get("pressure_psi", settings.get("pressure", 20.0)))
    defaults = {"pressure": pressure, "rest_length_unpressurized": rec.il,
                "rest_length_pressurized": rec.rest_length(pressure)}
    defaults.update(settings.get("protocol", {}))
    if args.protocol:
        cfg = protocol_from_file(args.protocol, defaults)
    else:
        if pressure <= 5.0:
            defaults.setdefault("extension", 1.0)
        cfg = ProtocolConfig.from_dict(defaults)
    meta = {"actuator_id": rec.id, "pressure_psi": pressure,
            "rest_length_pressurized_mm": cfg.rest_length_pressurized,
            "rest_length_unpressurized_mm": cfg.rest_length_unpressurized}
    curve = build_fv_curve(trace, cfg, meta, time_offset=args.time_offset)
    csvio.write_fv_curve(args.out, curve)
    if args.points:
        csvio.write_fv_curve(args.points, curve, raw=True)
    groups = curve.groups()
    _say(args, f"ramps={len(curve.points)} groups={len(groups)} eps0={curve.eps0!r} d_eps={curve.d_eps!r}")
    return EXIT_OK


def cmd_fit(args, settings) -> int:
    if args.stage == "sheath" and not args.control_params:
        raise UsageError("--stage sheath requires --control-params")
    curve = csvio.read_fv(args.fv)
    if args.pressure is not None:
        curve = curve.at_pressure(args.pressure)
    if args.eps0 is not None or args.d_eps is not None:
        if len(curve.conditions) > 1:
            raise UsageError("--eps0/--d-eps need a single-pressure curve (use --pressure)")
        pressures = curve.pressures or [math.nan]
        p, (e0, de) = next(iter(curve.conditions.items()), (pressures[0], (None, None)))
        e0 = args.eps0 if args.eps0 is not None else e0
        de = args.d_eps if args.d_eps is not None else de
        if e0 is None or de is None:
            raise UsageError("FV file lacks eps0/d_eps metadata; pass both --eps0 and --d-eps")
        curve.conditions = {p: (e0, de)}
    if len(curve.conditions) != 1:
        raise UsageError("FV file must describe exactly one pressure (use --pressure) with eps0/d_eps metadata")
    control = None
    if args.stage == "sheath":
        cdoc = csvio.read_params(args.control_params)
        cchain = csvio.chain_from_params(cdoc)
        c = cchain.control
        control = NormalizedSlse(c.kappa, c.gamma, 1.0)
    result = fit_curve(curve, args.stage, control, use_means=args.use_means,
                       max_iter=args.max_iter, rtol=args.rtol)
    fit = {
        "stage": args.stage,
        "rss": result.rss,
        "r2": result.r2,
        "iterations": result.n_iter,
        "converged": result.converged,
        "stderr": result.stderr,
        "flags": result.flags,
        "n_points": len(curve.points),
    }
    pressure = next(iter(curve.conditions))
    doc = csvio.params_document(result.chain, curve.eps0, curve.d_eps, fit, pressure_psi=pressure,
                                source_fv=str(args.fv))
    if "actuator_id" in curve.metadata:
        doc["actuator_id"] = curve.metadata["actuator_id"]
    csvio.write_params(args.out, doc)
    params = " ".join(f"{k}={v!r}" for k, v in result.params.items())
    _say(args, f"{params} r2={result.r2!r} converged={str(result.converged).lower()}")
    if result.flags:
        log.warning("fit flags: %s", ", ".join(result.flags))
    return EXIT_OK if result.converged else EXIT_NUMERIC


def cmd_fv(args, settings) -> int:
    doc = csvio.read_params(args.params)
    chain = csvio.chain_from_params(doc)
    eps0 = args.eps0 if args.eps0 is not None else doc.get("eps0")
    d_eps = args.d_eps if args.d_eps is not None else doc.get("d_eps")
    if eps0 is None or d_eps is None:
        raise UsageError("eps0 and d_eps are needed (parameter file keys or --eps0/--d-eps)")
    try:
        velocities = velocity_grid(args.vmin, args.vmax, args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    header = fv_header(chain, float(eps0), float(d_eps))
    rows = analytic_fv_rows(chain, float(eps0), float(d_eps), velocities)
    csvio.atomic_write_text(args.out, csvio.render_table(csvio.ANALYTIC_FV_COLUMNS, rows, header))
    _say(args, f"rows={len(rows)} dfv_asymptote={header['dfv_asymptote']!r} "
               f"v_alpha_0.9={header['v_alpha_0.9_approx']!r}")
    return EXIT_OK


def cmd_sweep(args, settings) -> int:
    doc, text = _load_json(args.spec)
    try:
        spec = SweepSpec.from_dict(doc)
    except KeyError as exc:
        raise UsageError(f"{args.spec}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise _validation(args.spec, text, exc) from None
    entries, checks = run_sweep(spec, workers=args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"parameter": spec.parameter, "element": spec.element, "eps0": spec.eps0, "d_eps": spec.d_eps,
                "entries": [], "checks": checks}
    for i, e in enumerate(entries):
        name = f"fv_{spec.parameter}_{i:03d}.csv"
        header = dict(e["header"])
        header[spec.parameter] = e["value"]
        csvio.atomic_write_text(out_dir / name, csvio.render_table(csvio.ANALYTIC_FV_COLUMNS, e["rows"], header))
        manifest["entries"].append({
            "file": name,
            "value": e["value"],
            "dfv_asymptote": header["dfv_asymptote"],
            "v_alpha_0.9_approx": header["v_alpha_0.9_approx"],
            "v_alpha_0.9_exact": header["v_alpha_0.9_exact"],
            "distance_to_control": e["distance_to_control"],
        })
    csvio.atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    failed = [k for k, ok in checks.items() if not ok]
    _say(args, f"files={len(entries)} checks_failed={len(failed)}")
    for k in failed:
        log.warning("monotonicity check failed: %s", k)
    return EXIT_OK


def cmd_sync(args, settings) -> int:
    if args.offset is None and not args.auto:
        raise UsageError("give --offset SECONDS or --auto")
    trace = csvio.read_trace(args.machine)
    log_t, log_p = csvio.read_pressure_log(args.pressure)
    merged = synchronize(trace, (log_t, log_p), None if args.auto else args.offset)
    csvio.write_trace(args.out, merged)
    _say(args, f"offset_s={merged.metadata['pressure_offset_s']!r} samples={len(merged)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vmafv", description="Viscoelastic McKibben actuator FV toolkit")
    p.add_argument("--config", help=f"settings JSON (default: ${CONFIG_DIR_ENV}/{CONFIG_NAME})")
    p.add_argument("--seed", type=int, default=None, help="random seed for noise")
    p.add_argument("--quiet", action="store_true", help="suppress summaries")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("protocol", help="build an iso-velocity strain profile")
    s.add_argument("config_file")
    s.add_argument("out")
    s.set_defaults(func=cmd_protocol)

    s = sub.add_parser("simulate", help="simulate a force trace")
    s.add_argument("params")
    s.add_argument("profile")
    s.add_argument("out")
    s.add_argument("--noise", type=float, default=None, help="force noise sigma [N]")
    s.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="extract an FV curve from a trace")
    s.add_argument("trace")
    s.add_argument("catalog", help="catalog CSV path, or 'table1' for the built-in table")
    s.add_argument("actuator")
    s.add_argument("out")
    s.add_argument("--points", help="also write raw per-ramp points here")
    s.add_argument("--protocol", help="protocol JSON used for segmentation")
    s.add_argument("--time-offset", type=float, default=0.0, help="trace time of protocol t=0 [s]")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", help="fit model parameters to an FV curve")
    s.add_argument("fv")
    s.add_argument("out")
    s.add_argument("--stage", choices=("control", "sheath"), default="control")
    s.add_argument("--control-params")
    s.add_argument("--pressure", type=float)
    s.add_argument("--eps0", type=float)
    s.add_argument("--d-eps", type=float)
    s.add_argument("--use-means", action="store_true", help="fit group means instead of pooled rows")
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--rtol", type=float, default=1e-10)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("fv", help="tabulate the analytic FV curve")
    s.add_argument("params")
    s.add_argument("out")
    s.add_argument("--vmin", type=float, default=1e-4)
    s.add_argument("--vmax", type=float, default=1e2)
    s.add_argument("--n", type=int, default=60)
    s.add_argument("--eps0", type=float)
    s.add_argument("--d-eps", type=float)
    s.set_defaults(func=cmd_fv)

    s = sub.add_parser("sweep", help="parameter sweep producing a family of FV curves")
    s.add_argument("spec")
    s.add_argument("out_dir")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("sync", help="attach a pressure log to a machine trace")
    s.add_argument("machine")
    s.add_argument("pressure")
    s.add_argument("out")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--offset", type=float)
    g.add_argument("--auto", action="store_true")
    s.set_defaults(func=cmd_sync)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="vmafv: %(levelname)s: %(message)s")
    try:
        settings = load_settings(args.config)
        return args.func(args, settings)
    except FitError as exc:
        print(f"vmafv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, SchemaError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) else exc
        if isinstance(exc, FileNotFoundError):
            msg = f"{exc.filename}: no such file"
        print(f"vmafv: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"vmafv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
