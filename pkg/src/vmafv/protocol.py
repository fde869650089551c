"""Iso-velocity test protocol generator.

Displacements are commanded in mm relative to the unpressurized rest length
(where the actuator is clamped) and converted to strain relative to the
pressurized rest length.  One repetition is::

    settle hold
    precondition: +A, then -A, then back to 0 (slow)
    settle hold
    for each speed v:
        ramp +E at v, hold, return at return_rate, hold,
        ramp -E at v, hold, return at return_rate, hold
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .timesim import DEFAULT_DT, StrainProfile

PAPER_VELOCITIES = (2.0, 4.0, 6.0, 8.0, 10.0)
PAPER_PRESSURES = (5.0, 10.0, 15.0, 20.0)
LOW_PRESSURE_PSI = 5.0
LOW_PRESSURE_EXTENSION = 1.0


@dataclass(frozen=True)
class ProtocolConfig:
    """Iso-velocity protocol settings; lengths in mm, speeds in mm/s, times in s.

    Rest-length defaults describe a 10 mm control actuator at 20 psi.
    """

    velocities: tuple = PAPER_VELOCITIES
    extension: float = 2.0
    hold: float = 30.0
    return_rate: float = 0.01
    precondition_amplitude: float = 4.0
    precondition_rate: float = 0.01
    rest_length_unpressurized: float = 94.3
    rest_length_pressurized: float = 70.3
    pressure: float = 20.0
    repetitions: int = 5
    settle: float = 30.0
    dt: float = DEFAULT_DT
    allow_below_rest: bool = False

    def __post_init__(self):
        object.__setattr__(self, "velocities", tuple(float(v) for v in self.velocities))
        if not self.velocities:
            raise ValueError("velocities: at least one speed is required")
        if any(not (math.isfinite(v) and v > 0.0) for v in self.velocities):
            raise ValueError("velocities: all speeds must be positive (direction is implied)")
        for name in ("extension", "return_rate", "precondition_rate", "rest_length_unpressurized",
                     "rest_length_pressurized", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name}: must be positive")
        for name in ("hold", "settle", "precondition_amplitude"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name}: must be non-negative")
        for name in ("hold", "settle"):
            if 0.0 < getattr(self, name) < self.dt:
                raise ValueError(f"{name}: must be zero or at least one sample period ({self.dt} s)")
        if self.rest_length_pressurized > self.rest_length_unpressurized:
            raise ValueError("rest_length_pressurized: must not exceed the unpressurized rest length")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ValueError("repetitions: must be a positive integer")

    @classmethod
    def for_pressure(cls, pressure: float, **kwargs) -> "ProtocolConfig":
        """Paper defaults at ``pressure``; only 1 mm of extension at 5 psi."""
        if "extension" not in kwargs:
            kwargs["extension"] = LOW_PRESSURE_EXTENSION if pressure <= LOW_PRESSURE_PSI else 2.0
        return cls(pressure=pressure, **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown protocol setting")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["velocities"] = list(self.velocities)
        return d

    @property
    def eps_start(self) -> float:
        return strain_from_extension(self.rest_length_unpressurized - self.rest_length_pressurized,
                                     self.rest_length_pressurized)


@dataclass(frozen=True)
class RampCommand:
    """One fast ramp as commanded; ``velocity`` is signed (mm/s, + = extension)."""

    ramp_id: int
    repetition: int
    start_time: float
    duration: float
    velocity: float
    extension: float
    start_extension: float = 0.0

    @property
    def speed(self) -> float:
        return abs(self.velocity)

    @property
    def direction(self) -> str:
        return "extend" if self.velocity > 0 else "shorten"

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


@dataclass
class _Builder:
    cfg: ProtocolConfig
    times: list = field(default_factory=lambda: [0.0])
    ext: list = field(default_factory=lambda: [0.0])
    kinds: list = field(default_factory=list)
    ramps: list = field(default_factory=list)

    def hold(self, duration):
        if duration > 0.0:
            self.times.append(self.times[-1] + duration)
            self.ext.append(self.ext[-1])
            self.kinds.append("hold")

    def move(self, target, speed, kind):
        distance = abs(target - self.ext[-1])
        if distance == 0.0:
            return
        self.times.append(self.times[-1] + distance / speed)
        self.ext.append(float(target))
        self.kinds.append(kind)


def _build(cfg: ProtocolConfig) -> _Builder:
    validate_geometry(cfg)
    b = _Builder(cfg)
    A, E = cfg.precondition_amplitude, cfg.extension
    ramp_id = 0
    for rep in range(int(cfg.repetitions)):
        b.hold(cfg.settle)
        b.move(+A, cfg.precondition_rate, "precondition")
        b.move(-A, cfg.precondition_rate, "precondition")
        b.move(0.0, cfg.precondition_rate, "precondition")
        b.hold(cfg.settle)
        for v in cfg.velocities:
            for sign in (+1.0, -1.0):
                start = b.times[-1]
                b.move(sign * E, v, "ramp")
                b.ramps.append(RampCommand(ramp_id, rep, start, b.times[-1] - start, sign * v, E))
                ramp_id += 1
                b.hold(cfg.hold)
                b.move(0.0, cfg.return_rate, "return")
                b.hold(cfg.hold)
    return b


def validate_geometry(cfg: ProtocolConfig) -> None:
    """Reject shortening ramps that would pass below the pressurized rest length."""
    slack = cfg.rest_length_unpressurized - cfg.rest_length_pressurized
    if cfg.extension > slack and not cfg.allow_below_rest:
        raise ValueError(
            f"extension: shortening {cfg.extension} mm from the unpressurized rest length would go "
            f"{cfg.extension - slack:.3g} mm below the pressurized rest length "
            f"({cfg.rest_length_pressurized} mm at {cfg.pressure} psi); reduce the extension "
            f"(the 5 psi rule uses {LOW_PRESSURE_EXTENSION} mm) or set allow_below_rest"
        )


def build_protocol(cfg: ProtocolConfig) -> StrainProfile:
    b = _build(cfg)
    ext = np.array(b.ext)
    strain = strain_from_extension(ext + (cfg.rest_length_unpressurized - cfg.rest_length_pressurized),
                                   cfg.rest_length_pressurized)
    meta = {
        "rest_length_pressurized_mm": cfg.rest_length_pressurized,
        "rest_length_unpressurized_mm": cfg.rest_length_unpressurized,
        "pressure_psi": cfg.pressure,
    }
    return StrainProfile(np.array(b.times), strain, cfg.dt, meta)


def ramp_schedule(cfg: ProtocolConfig) -> list[RampCommand]:
    """Commanded fast ramps in time order."""
    return _build(cfg).ramps


def segment_kinds(cfg: ProtocolConfig) -> list[str]:
    return _build(cfg).kinds


def strain_from_extension(extension, rest_length_pressurized: float):
    """Extension (mm) or speed (mm/s) to strain (or strain rate) on the pressurized rest length."""
    if not rest_length_pressurized > 0.0:
        raise ValueError("rest length must be positive")
    return extension / rest_length_pressurized


rate_from_velocity = strain_from_extension


def contraction_ratio(il: float, ml: float) -> float:
    """Max contraction ratio in percent, 100 (IL - ML) / IL."""
    if not ml > 0.0:
        raise ValueError("minimum length must be positive")
    if ml > il:
        raise ValueError(f"minimum length {ml} exceeds initial length {il}")
    return 100.0 * (il - ml) / il


def check_protocol_structure(profile: StrainProfile, cfg: ProtocolConfig, rtol: float = 1e-9) -> list[str]:
    """Decode a profile back into displacement segments and list deviations from ``cfg``.

    An empty list means the profile has the expected structure.
    """
    issues: list[str] = []
    Lp, IL = cfg.rest_length_pressurized, cfg.rest_length_unpressurized
    ext = profile.strains * Lp - (IL - Lp)
    dur = profile.durations
    dext = np.diff(ext)

    def close(a, b):
        return math.isclose(a, b, rel_tol=rtol, abs_tol=rtol * max(1.0, abs(b)))

    if not close(ext[0], 0.0):
        issues.append(f"profile starts at {ext[0]:.6g} mm, expected 0")
    k = 0
    n = len(dur)

    def take(kind, d_ext, speed=None, duration=None):
        nonlocal k
        if k >= n:
            issues.append(f"missing {kind} segment at index {k}")
            return
        if not close(dext[k], d_ext):
            issues.append(f"segment {k} ({kind}): displacement {dext[k]:.6g} mm, expected {d_ext:.6g}")
        if speed is not None and not close(abs(dext[k]) / dur[k], speed):
            issues.append(f"segment {k} ({kind}): speed {abs(dext[k]) / dur[k]:.6g} mm/s, expected {speed:.6g}")
        if duration is not None and not close(dur[k], duration):
            issues.append(f"segment {k} ({kind}): duration {dur[k]:.6g} s, expected {duration:.6g}")
        k += 1

    A, E = cfg.precondition_amplitude, cfg.extension
    for _ in range(int(cfg.repetitions)):
        if cfg.settle > 0:
            take("settle", 0.0, duration=cfg.settle)
        if A > 0:
            take("precondition +A", A, speed=cfg.precondition_rate)
            take("precondition -A", -2 * A, speed=cfg.precondition_rate)
            take("precondition return", A, speed=cfg.precondition_rate)
        if cfg.settle > 0:
            take("settle", 0.0, duration=cfg.settle)
        for v in cfg.velocities:
            for sign in (1.0, -1.0):
                take("ramp", sign * E, speed=v)
                if cfg.hold > 0:
                    take("hold", 0.0, duration=cfg.hold)
                take("return", -sign * E, speed=cfg.return_rate)
                if cfg.hold > 0:
                    take("hold", 0.0, duration=cfg.hold)
                if k <= n and not close(ext[k], 0.0):
                    issues.append(f"block for {sign * v:+g} mm/s does not return to 0 mm")
    if k != n:
        issues.append(f"{n - k} unexpected trailing segments")
    if cfg.pressure <= LOW_PRESSURE_PSI and E > LOW_PRESSURE_EXTENSION:
        issues.append(f"{E} mm ramps at {cfg.pressure} psi; expected {LOW_PRESSURE_EXTENSION} mm")
    return issues


def total_duration(cfg: ProtocolConfig) -> float:
    """Sum of segment durations computed directly from the settings."""
    A, E = cfg.precondition_amplitude, cfg.extension
    per_rep = 2 * cfg.settle + 4 * A / cfg.precondition_rate
    per_rep += sum(2 * (E / v + 2 * cfg.hold + E / cfg.return_rate) for v in cfg.velocities)
    return per_rep * cfg.repetitions

