"""Force trace -> experimental force-velocity curve.

Ramps are located using the commanded protocol timing, the ramp speed is
the slope of a flat-ramp-flat fit to the extension record, the starting
force is the mean force over the 2 s before ramp onset, and the peak force
is read at the first sample where the extension reaches its target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .protocol import ProtocolConfig, RampCommand, ramp_schedule
from .timesim import ForceTrace


class SegmentationError(ValueError):
    """The trace does not contain the ramps the protocol commands."""


@dataclass(frozen=True)
class RampWindow:
    ramp_id: int
    start_index: int
    start_time: float
    reach_index: int
    reach_time: float
    velocity: float  # fitted, mm/s, signed
    direction: str  # "extend" | "shorten"
    residual: float
    nominal_speed: float
    repetition: int = 0
    baseline_extension: float = 0.0
    target_extension: float = 0.0

    def __post_init__(self):
        if not self.reach_time > self.start_time:
            raise ValueError("target-reach time must follow the ramp start")
        if self.velocity != 0.0 and (self.velocity > 0) != (self.direction == "extend"):
            raise ValueError("fitted velocity sign does not match the ramp direction")


@dataclass(frozen=True)
class FvPoint:
    """One ramp's normalized peak force; ``velocity`` is shortening-positive [1/s]."""

    velocity: float
    fv: float
    pressure: float = math.nan
    ramp_id: int = -1
    direction: str = ""
    nominal_speed: float = math.nan
    f0: float = math.nan
    peak_force: float = math.nan
    f0_window: float = math.nan

    @property
    def v_hat(self) -> float:
        """Extension strain rate (negative of shortening velocity)."""
        return -self.velocity


@dataclass(frozen=True)
class FvGroup:
    pressure: float
    nominal_speed: float
    direction: str
    velocity: float
    fv_mean: float
    fv_std: float
    n: int


@dataclass
class FvCurve:
    """FV points with per-pressure ramp context ``conditions[p] = (eps0, d_eps)``."""

    points: list
    conditions: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def pressures(self) -> list[float]:
        return sorted({p.pressure for p in self.points})

    def _single(self, key):
        if len(self.conditions) != 1:
            raise ValueError(f"curve spans {len(self.conditions)} pressures; select one with at_pressure()")
        return next(iter(self.conditions.values()))[key]

    @property
    def eps0(self) -> float:
        return self._single(0)

    @property
    def d_eps(self) -> float:
        return self._single(1)

    def at_pressure(self, pressure: float) -> "FvCurve":
        pts = [p for p in self.points if _same(p.pressure, pressure)]
        cond = {k: v for k, v in self.conditions.items() if _same(k, pressure)}
        return FvCurve(pts, cond, dict(self.metadata))

    def groups(self) -> list[FvGroup]:
        """Mean and sample std per (pressure, nominal speed, direction)."""
        keys: dict = {}
        for p in self.points:
            keys.setdefault((p.pressure, p.nominal_speed, p.direction), []).append(p)
        out = []
        for (pressure, speed, direction), pts in keys.items():
            fv = np.array([p.fv for p in pts])
            v = np.array([p.velocity for p in pts])
            std = float(np.std(fv, ddof=1)) if len(fv) > 1 else 0.0
            out.append(FvGroup(pressure, speed, direction, float(np.mean(v)), float(np.mean(fv)), std, len(fv)))
        out.sort(key=lambda g: (_nan_key(g.pressure), g.velocity))
        return out

    def means(self) -> "FvCurve":
        pts = [FvPoint(g.velocity, g.fv_mean, g.pressure, -1, g.direction, g.nominal_speed) for g in self.groups()]
        return FvCurve(pts, dict(self.conditions), dict(self.metadata))

    def velocities(self) -> np.ndarray:
        return np.array([p.velocity for p in self.points])

    def fv(self) -> np.ndarray:
        return np.array([p.fv for p in self.points])


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


def _nan_key(x):
    return (1, 0.0) if math.isnan(x) else (0, x)


# -- segmentation -------------------------------------------------------------


def _locate(trace: ForceTrace, cmd: RampCommand, offset: float, search: float, reach_rtol: float):
    t = trace.time
    ext = trace.extension
    t_start = cmd.start_time + offset
    sign = 1.0 if cmd.velocity > 0 else -1.0

    pre = (t >= t_start - search - 2.0) & (t < t_start - search)
    if not np.any(pre):
        pre = t < t_start
    if not np.any(pre):
        return None
    baseline = float(np.median(ext[pre]))
    noise = float(np.std(ext[pre])) if np.count_nonzero(pre) > 2 else 0.0

    lo, hi = np.searchsorted(t, [t_start - search, cmd.end_time + offset + search])
    if hi <= lo:
        return None
    rel = sign * (ext[lo:hi] - baseline)
    target = cmd.extension * (1.0 - reach_rtol)
    hits = np.nonzero(rel >= target)[0]
    if len(hits) == 0:
        return None
    reach = lo + int(hits[0])

    onset_tol = max(cmd.extension * reach_rtol, 4.0 * noise)
    quiet = np.nonzero(sign * (ext[lo:reach] - baseline) <= onset_tol)[0]
    if len(quiet) == 0:
        return None
    start = lo + int(quiet[-1])
    return start, reach, baseline, baseline + sign * cmd.extension


def segment_ramps(trace: ForceTrace, nominal: ProtocolConfig, time_offset: float = 0.0,
                  search: float | None = None, reach_rtol: float = 1e-9,
                  pre_margin: float = 0.5) -> list[RampWindow]:
    """One window per commanded fast ramp, from onset to target reach.

    ``time_offset`` is added to the protocol clock to get trace time.  Slow
    returns and the preconditioning cycle are never windows.
    """
    if len(trace) < 2:
        raise SegmentationError("trace is empty")
    commands = ramp_schedule(nominal)
    if search is None:
        search = max(1.0, min(0.25 * nominal.hold, 5.0)) if nominal.hold > 0 else 1.0
    windows, missing = [], []
    for cmd in commands:
        loc = _locate(trace, cmd, time_offset, search, reach_rtol)
        if loc is None:
            missing.append(f"#{cmd.ramp_id} ({cmd.velocity:+g} mm/s at t={cmd.start_time + time_offset:.3f} s)")
            continue
        start, reach, base, target = loc
        provisional = RampWindow(cmd.ramp_id, start, float(trace.time[start]), reach, float(trace.time[reach]),
                                 0.0, cmd.direction, 0.0, cmd.speed, cmd.repetition, base, target)
        fit = _fit_window(trace, provisional, pre_margin)
        windows.append(RampWindow(
            cmd.ramp_id, start, fit.t_start, reach, float(trace.time[reach]), fit.slope, cmd.direction,
            fit.residual, cmd.speed, cmd.repetition, base, target,
        ))
    if missing:
        raise SegmentationError(
            f"found {len(windows)} ramps, expected {len(commands)}; missing: " + ", ".join(missing)
        )
    return windows


# -- ramp velocity ------------------------------------------------------------


@dataclass(frozen=True)
class _RampFit:
    slope: float
    t_start: float
    t_end: float
    residual: float


def _profile_sse(t, y, ta, tb):
    if not tb > ta:
        return math.inf, 0.0, 0.0
    phi = np.clip((t - ta) / (tb - ta), 0.0, 1.0)
    A = np.column_stack([1.0 - phi, phi])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(r @ r), float(coef[0]), float(coef[1])


def _fit_window(trace: ForceTrace, window: RampWindow, pre_margin: float, post_margin: float = 0.0,
                search_samples: int = 3) -> _RampFit:
    t_all, y_all = trace.time, trace.extension
    sel = (t_all >= window.start_time - pre_margin) & (t_all <= window.reach_time + post_margin)
    idx = np.nonzero(sel)[0]
    if np.count_nonzero((idx >= window.start_index) & (idx <= window.reach_index)) < 4:
        raise ValueError("ramp window needs at least 4 samples")
    t, y = t_all[idx], y_all[idx]
    if np.ptp(y) == 0.0:
        raise ValueError("extension has zero variance over the ramp window")
    # refit in local time so breakpoint arithmetic keeps full precision
    t0 = t[0]
    tl = t - t0

    i_a = int(np.searchsorted(idx, window.start_index))
    i_b = int(np.searchsorted(idx, window.reach_index))
    best = (math.inf, None, None)
    for a in range(max(0, i_a - search_samples), min(len(t), i_a + search_samples + 1)):
        for b in range(max(a + 1, i_b - search_samples), min(len(t), i_b + search_samples + 1)):
            sse = _profile_sse(tl, y, tl[a], tl[b])[0]
            if sse < best[0]:
                best = (sse, tl[a], tl[b])
    sse, ta, tb = best
    scale = max(float(np.ptp(y)), 1e-300) ** 2
    if sse > 1e-24 * scale * len(y):
        res = minimize(lambda p: _profile_sse(tl, y, p[0], p[1])[0] / scale, [ta, tb], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000})
        if res.fun * scale < sse:
            sse, ta, tb = res.fun * scale, float(res.x[0]), float(res.x[1])
    _, y0, y1 = _profile_sse(tl, y, ta, tb)
    return _RampFit((y1 - y0) / (tb - ta), float(ta + t0), float(tb + t0), math.sqrt(sse / len(y)))


def fit_ramp_velocity(trace: ForceTrace, window: RampWindow, pre_margin: float = 0.5,
                      post_margin: float = 0.0) -> float:
    """Slope (mm/s) of a least-squares flat-ramp-flat fit to the extension record.

    The fit spans the window plus ``pre_margin`` seconds before onset and
    ``post_margin`` seconds after target reach.  Breakpoints are searched on
    the samples around the detected onset/reach and then refined continuously.
    """
    return _fit_window(trace, window, pre_margin, post_margin).slope


# -- FV extraction ------------------------------------------------------------


def extract_fv_point(trace: ForceTrace, window: RampWindow, rest_length_pressurized: float,
                     f0_window: float = 2.0, min_history: float = 0.5, pressure: float | None = None) -> FvPoint:
    """Normalized peak force for one ramp.

    F0 is the mean force over ``[start - f0_window, start)``; if less history
    exists, whatever is available is used (with a warning) down to
    ``min_history`` seconds.  The peak is the force at the target-reach
    sample, never later.
    """
    if window.velocity == 0.0:
        raise ValueError("zero-velocity window has no force-velocity point")
    if not rest_length_pressurized > 0.0:
        raise ValueError("rest length must be positive")
    t = trace.time
    sel = (t >= window.start_time - f0_window) & (t < window.start_time)
    if not np.any(sel):
        raise ValueError("no samples before the ramp start for F0")
    ts = t[sel]
    spacing = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
    history = min(window.start_time - float(ts[0]) + spacing, f0_window)
    if history < min_history:
        raise ValueError(f"only {history:.3g} s of pre-ramp history (need {min_history} s)")
    if history < f0_window * (1 - 1e-9):
        warnings.warn(f"ramp {window.ramp_id}: F0 averaged over {history:.3g} s instead of {f0_window} s",
                      stacklevel=2)
    f0 = float(np.mean(trace.force[sel]))
    if not f0 > 0.0:
        raise ValueError(f"starting force {f0:.6g} N is not positive; normalization undefined")
    peak = float(trace.force[window.reach_index])
    if pressure is None:
        pressure = float(trace.metadata.get("pressure_psi", math.nan))
    return FvPoint(
        velocity=-window.velocity / rest_length_pressurized,
        fv=peak / f0,
        pressure=pressure,
        ramp_id=window.ramp_id,
        direction=window.direction,
        nominal_speed=window.nominal_speed,
        f0=f0,
        peak_force=peak,
        f0_window=history,
    )


def build_fv_curve(trace: ForceTrace, protocol: ProtocolConfig, metadata: dict | None = None,
                   time_offset: float = 0.0) -> FvCurve:
    """Segment, extract every ramp and return the pooled curve for one pressure.

    Rest lengths come from ``metadata`` (``rest_length_pressurized_mm``,
    ``rest_length_unpressurized_mm``), then the trace metadata, then the
    protocol.
    """
    meta = dict(trace.metadata)
    meta.update(metadata or {})
    Lp = float(meta.get("rest_length_pressurized_mm", protocol.rest_length_pressurized))
    IL = float(meta.get("rest_length_unpressurized_mm", protocol.rest_length_unpressurized))
    pressure = float(meta.get("pressure_psi", protocol.pressure))
    windows = segment_ramps(trace, protocol, time_offset=time_offset)
    points = [extract_fv_point(trace, w, Lp, pressure=pressure) for w in windows]
    start_length = IL + float(np.median([w.baseline_extension for w in windows]))
    eps0 = (start_length - Lp) / Lp
    d_eps = protocol.extension / Lp
    meta.update({"rest_length_pressurized_mm": Lp, "rest_length_unpressurized_mm": IL, "pressure_psi": pressure})
    return FvCurve(points, {pressure: (eps0, d_eps)}, meta)


# -- synchronization ----------------------------------------------------------


def _step_edge(t: np.ndarray, y: np.ndarray) -> float:
    """Time at which ``y`` first crosses halfway between its initial and final levels."""
    n = max(1, len(y) // 20)
    lo, hi = float(np.median(y[:n])), float(np.median(y[-n:]))
    if lo == hi:
        raise ValueError("signal has no step to align on")
    mid = 0.5 * (lo + hi)
    above = (y - mid) * np.sign(hi - lo) >= 0.0
    k = int(np.argmax(above))
    if k == 0:
        return float(t[0])
    t0, t1, y0, y1 = t[k - 1], t[k], y[k - 1], y[k]
    return float(t0 + (mid - y0) * (t1 - t0) / (y1 - y0))


def estimate_offset(machine_trace: ForceTrace, pressure_time, pressure) -> float:
    """Machine-clock minus pressure-clock time of the pressurization step."""
    t_machine = _step_edge(machine_trace.time, machine_trace.force)
    t_log = _step_edge(np.asarray(pressure_time, float), np.asarray(pressure, float))
    return t_machine - t_log


def synchronize(machine_trace: ForceTrace, pressure_log, offset: float | None = None) -> ForceTrace:
    """Attach a pressure column resampled onto the machine clock.

    ``pressure_log`` is a ``(time, pressure)`` pair.  A pressure sample logged at
    ``t`` is placed at machine time ``t + offset``; with ``offset=None`` the
    offset is estimated from the pressurization step edge.
    """
    pt, pv = (np.asarray(a, dtype=float) for a in pressure_log)
    if len(pt) != len(pv) or len(pt) < 2:
        raise ValueError("pressure log needs matching time and pressure columns with >= 2 samples")
    if np.any(np.diff(pt) <= 0.0):
        raise ValueError("pressure log time must be strictly increasing")
    if offset is None:
        offset = estimate_offset(machine_trace, pt, pv)
    shifted = pt + offset
    tm = machine_trace.time
    if shifted[-1] < tm[0] or shifted[0] > tm[-1]:
        raise ValueError("pressure log and machine trace do not overlap in time")
    out = machine_trace.copy(pressure=np.interp(tm, shifted, pv))
    out.metadata["pressure_offset_s"] = float(offset)
    return out
