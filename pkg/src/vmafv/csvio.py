"""Readers and writers for the trace, profile, FV and parameter file formats.

All CSVs are UTF-8 with LF line endings, optional ``# key=value`` metadata
lines, then one header row.  Floats are written with ``repr`` (shortest
round-trip form) so read -> write reproduces a file byte for byte.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .analysis import FvCurve, FvGroup, FvPoint
from .slse import CONTROL, NormalizedSlse, SlseChain, SlseParams, denormalize_params
from .timesim import ForceTrace, StrainProfile

TRACE_COLUMNS = ("time_s", "extension_mm", "strain", "force_N")
PRESSURE_COLUMN = "pressure_psi"
PROFILE_COLUMNS = ("time_s", "strain")
FV_COLUMNS = ("pressure_psi", "shortening_velocity_per_s", "fv_mean", "fv_std", "n", "direction")
ANALYTIC_FV_COLUMNS = ("shortening_velocity_per_s", "strain_rate_per_s", "fv", "dfv")
PRESSURE_LOG_COLUMNS = ("time_s", "pressure_psi")


class SchemaError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def parse_scalar(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if s in ("true", "false"):
        return s == "true"
    return s


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_table(columns, rows, metadata: dict | None = None) -> str:
    lines = [f"# {k}={fmt(v)}" for k, v in (metadata or {}).items()]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def parse_table(text: str, source: str = "<csv>"):
    """Return (metadata, header, rows-of-strings, first data line number)."""
    meta = {}
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = parse_scalar(v.strip())
        i += 1
    if i >= len(lines):
        raise SchemaError(f"{source}: missing header row")
    header = [h.strip() for h in lines[i].rstrip("\r").split(",")]
    rows = [ln.rstrip("\r").split(",") for ln in lines[i + 1:] if ln.strip()]
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{source}:{i + 2 + k}: expected {len(header)} fields, got {len(row)}")
    return meta, header, rows, i + 2


def _require(header, columns, source):
    for c in columns:
        if c not in header:
            raise SchemaError(f"{source}: missing column {c!r}")


def _float_column(header, rows, name, source, first_line):
    j = header.index(name)
    out = np.empty(len(rows))
    for k, row in enumerate(rows):
        try:
            out[k] = float(row[j])
        except ValueError:
            raise SchemaError(f"{source}:{first_line + k}: column {name!r}: not a number: {row[j]!r}") from None
    return out


def _read(path):
    path = Path(path)
    return path.read_text(encoding="utf-8"), str(path)


# -- trace --------------------------------------------------------------------


def render_trace(trace: ForceTrace) -> str:
    cols = list(TRACE_COLUMNS)
    data = [trace.time, trace.extension, trace.strain, trace.force]
    if trace.pressure is not None:
        cols.append(PRESSURE_COLUMN)
        data.append(trace.pressure)
    rows = zip(*(d.tolist() for d in data))
    return render_table(cols, rows, trace.metadata)


def write_trace(path, trace: ForceTrace) -> None:
    atomic_write_text(path, render_trace(trace))


def parse_trace(text: str, source: str = "<trace>") -> ForceTrace:
    meta, header, rows, first = parse_table(text, source)
    _require(header, TRACE_COLUMNS, source)
    if not rows:
        raise SchemaError(f"{source}: no samples")
    cols = {c: _float_column(header, rows, c, source, first) for c in TRACE_COLUMNS}
    pressure = _float_column(header, rows, PRESSURE_COLUMN, source, first) if PRESSURE_COLUMN in header else None
    try:
        return ForceTrace(cols["time_s"], cols["strain"], cols["extension_mm"], cols["force_N"], pressure, meta)
    except ValueError as exc:
        raise SchemaError(f"{source}: {exc}") from None


def read_trace(path) -> ForceTrace:
    return parse_trace(*_read(path))


# -- profile ------------------------------------------------------------------


def render_profile(profile: StrainProfile) -> str:
    meta = {"dt": profile.dt}
    meta.update(profile.metadata)
    return render_table(PROFILE_COLUMNS, zip(profile.times.tolist(), profile.strains.tolist()), meta)


def write_profile(path, profile: StrainProfile) -> None:
    atomic_write_text(path, render_profile(profile))


def parse_profile(text: str, source: str = "<profile>") -> StrainProfile:
    meta, header, rows, first = parse_table(text, source)
    _require(header, PROFILE_COLUMNS, source)
    t = _float_column(header, rows, "time_s", source, first)
    s = _float_column(header, rows, "strain", source, first)
    dt = float(meta.pop("dt", 0.01))
    try:
        return StrainProfile(t, s, dt, meta)
    except ValueError as exc:
        raise SchemaError(f"{source}: {exc}") from None


def read_profile(path) -> StrainProfile:
    return parse_profile(*_read(path))


# -- pressure log -------------------------------------------------------------


def parse_pressure_log(text: str, source: str = "<pressure>"):
    _, header, rows, first = parse_table(text, source)
    _require(header, PRESSURE_LOG_COLUMNS, source)
    return (_float_column(header, rows, "time_s", source, first),
            _float_column(header, rows, "pressure_psi", source, first))


def read_pressure_log(path):
    return parse_pressure_log(*_read(path))


# -- FV -----------------------------------------------------------------------


def curve_metadata(curve: FvCurve) -> dict:
    meta = {}
    for key in ("actuator_id", "rest_length_pressurized_mm", "rest_length_unpressurized_mm"):
        if key in curve.metadata:
            meta[key] = curve.metadata[key]
    if len(curve.conditions) == 1:
        (pressure, (eps0, d_eps)), = curve.conditions.items()
        meta.update({"pressure_psi": pressure, "eps0": eps0, "d_eps": d_eps})
    else:
        for pressure, (eps0, d_eps) in sorted(curve.conditions.items()):
            meta[f"eps0@{fmt(pressure)}"] = eps0
            meta[f"d_eps@{fmt(pressure)}"] = d_eps
    return meta


def render_fv(groups, metadata: dict | None = None) -> str:
    rows = [(g.pressure, g.velocity, g.fv_mean, g.fv_std, g.n, g.direction) for g in groups]
    return render_table(FV_COLUMNS, rows, metadata)


def write_fv_curve(path, curve: FvCurve, raw: bool = False) -> None:
    """Write group means, or every raw point (n = 1) when ``raw`` is set."""
    if raw:
        groups = [FvGroup(p.pressure, p.nominal_speed, p.direction, p.velocity, p.fv, 0.0, 1) for p in curve.points]
    else:
        groups = curve.groups()
    atomic_write_text(path, render_fv(groups, curve_metadata(curve)))


def parse_fv(text: str, source: str = "<fv>") -> FvCurve:
    """Read an FV CSV back into a curve (one point per row)."""
    meta, header, rows, first = parse_table(text, source)
    _require(header, FV_COLUMNS, source)
    cols = {c: _float_column(header, rows, c, source, first) for c in FV_COLUMNS[:5]}
    jd = header.index("direction")
    points = []
    for k, row in enumerate(rows):
        direction = row[jd].strip()
        if direction not in ("extend", "shorten"):
            raise SchemaError(f"{source}:{first + k}: column 'direction': expected extend|shorten, got {direction!r}")
        points.append(FvPoint(cols["shortening_velocity_per_s"][k], cols["fv_mean"][k], cols["pressure_psi"][k],
                              direction=direction))
    conditions = {}
    if "eps0" in meta and "d_eps" in meta:
        conditions[float(meta.get("pressure_psi", math.nan))] = (float(meta["eps0"]), float(meta["d_eps"]))
    for key, value in meta.items():
        if key.startswith("eps0@"):
            p = key.split("@", 1)[1]
            conditions[float(p)] = (float(value), float(meta[f"d_eps@{p}"]))
    return FvCurve(points, conditions, meta)


def read_fv(path) -> FvCurve:
    return parse_fv(*_read(path))


def fv_rows(path):
    """Raw (metadata, header, rows) of an FV CSV for callers needing n/std."""
    text, source = _read(path)
    return parse_table(text, source)[:3]


# -- parameter file -----------------------------------------------------------


def chain_to_dict(chain: SlseChain) -> list[dict]:
    return [{"label": lab, "kappa": e.kappa, "gamma": e.gamma, "beta": e.beta}
            for lab, e in zip(chain.labels, chain.elements)]


def params_document(chain: SlseChain, eps0: float | None = None, d_eps: float | None = None,
                    fit: dict | None = None, **extra) -> dict:
    doc = {"model": f"{len(chain)}-SLSE", "elements": chain_to_dict(chain)}
    if eps0 is not None:
        doc["eps0"] = eps0
    if d_eps is not None:
        doc["d_eps"] = d_eps
    doc.update(extra)
    if fit is not None:
        doc["fit"] = fit
    return doc


def write_params(path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, allow_nan=True) + "\n")


def read_params(path) -> dict:
    text, source = _read(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list) or not doc["elements"]:
        raise SchemaError(f"{source}: 'elements' must be a non-empty list")
    doc["_source"] = source
    return doc


def _element_labels(doc):
    labels = [str(e.get("label", "")) for e in doc["elements"]]
    if CONTROL not in labels:
        labels[0] = CONTROL
    return labels


def chain_from_params(doc: dict) -> SlseChain:
    """Normalized chain; dimensional entries are normalized by the control k1."""
    source = doc.get("_source", "<params>")
    elements = doc["elements"]
    labels = _element_labels(doc)
    try:
        if all({"k1", "k2", "eta"} <= set(e) for e in elements):
            dim = [SlseParams(e["k1"], e["k2"], e["eta"]) for e in elements]
            k1c = dim[labels.index(CONTROL)].k1
            return SlseChain(tuple(NormalizedSlse(p.kappa, p.gamma, p.k1 / k1c) for p in dim), tuple(labels))
        return SlseChain(tuple(NormalizedSlse(e["kappa"], e["gamma"], e.get("beta", 1.0)) for e in elements),
                         tuple(labels))
    except KeyError as exc:
        raise SchemaError(f"{source}: element missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: {exc}") from None


def dimensional_from_params(doc: dict) -> list[SlseParams]:
    """Dimensional elements, using ``k1_control`` (default 1 N) for normalized files."""
    source = doc.get("_source", "<params>")
    elements = doc["elements"]
    try:
        if all({"k1", "k2", "eta"} <= set(e) for e in elements):
            return [SlseParams(e["k1"], e["k2"], e["eta"]) for e in elements]
        chain = chain_from_params(doc)
        return denormalize_params(chain.elements, float(doc.get("k1_control", 1.0)))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: {exc}") from None
