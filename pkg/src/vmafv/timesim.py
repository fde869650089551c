"""Time-domain simulation of dimensional SLSE chains (the virtual test machine).

Strain is piecewise linear in time, so within each segment the series-branch
ODE ``d(eps2)/dt = rate - gamma eps2`` is linear with constant input and is
advanced with its exact exponential solution.  There is no truncation error,
whatever the sample period.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .slse import SlseParams

DEFAULT_DT = 0.01  # 100 Hz


@dataclass(frozen=True, eq=False)
class StrainProfile:
    """Piecewise-linear strain schedule stored as breakpoints.

    ``times[0]`` is the start of the profile and ``strains`` the strain at each
    breakpoint, which keeps the trajectory continuous by construction.
    """

    times: np.ndarray
    strains: np.ndarray
    dt: float = DEFAULT_DT
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        strains = np.asarray(self.strains, dtype=float)
        if times.ndim != 1 or times.shape != strains.shape:
            raise ValueError("times and strains must be 1-D arrays of equal length")
        if len(times) < 2:
            raise ValueError("a profile needs at least one segment")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("segment durations must be positive")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(strains)):
            raise ValueError("profile contains non-finite values")
        if not self.dt > 0.0:
            raise ValueError("sample period dt must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "strains", strains)

    @classmethod
    def from_segments(cls, segments, eps_start: float, dt: float = DEFAULT_DT, t_start: float = 0.0,
                      metadata: dict | None = None) -> "StrainProfile":
        """Build from ``(duration, rate)`` pairs."""
        segments = list(segments)
        if not segments:
            raise ValueError("a profile needs at least one segment")
        times = [t_start]
        strains = [eps_start]
        for duration, rate in segments:
            if not duration > 0.0:
                raise ValueError(f"segment duration must be positive, got {duration!r}")
            times.append(times[-1] + duration)
            strains.append(strains[-1] + rate * duration)
        return cls(np.array(times), np.array(strains), dt, dict(metadata or {}))

    @property
    def eps_start(self) -> float:
        return float(self.strains[0])

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def rates(self) -> np.ndarray:
        return np.diff(self.strains) / np.diff(self.times)

    @property
    def segments(self) -> list[tuple[float, float]]:
        return list(zip(self.durations.tolist(), self.rates.tolist()))

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def strain_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.strains)


@dataclass(frozen=True, eq=False)
class ChainState:
    eps2: np.ndarray
    eps: float
    t: float

    @classmethod
    def steady(cls, n_elements: int, eps: float, t: float = 0.0) -> "ChainState":
        return cls(np.zeros(n_elements), float(eps), float(t))


@dataclass(eq=False)
class ForceTrace:
    """Sampled test record.  ``pressure`` is None for synthetic traces."""

    time: np.ndarray
    strain: np.ndarray
    extension: np.ndarray
    force: np.ndarray
    pressure: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        n = len(self.time)
        self.strain = np.asarray(self.strain, dtype=float)
        self.extension = np.asarray(self.extension, dtype=float)
        self.force = np.asarray(self.force, dtype=float)
        if self.pressure is not None:
            self.pressure = np.asarray(self.pressure, dtype=float)
        for name in ("strain", "extension", "force", "pressure"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise ValueError(f"column {name} has {len(col)} samples, expected {n}")
        if n > 1 and np.any(np.diff(self.time) <= 0.0):
            raise ValueError("trace time must be strictly increasing")

    def __len__(self):
        return len(self.time)

    def copy(self, **changes) -> "ForceTrace":
        return replace(self, metadata=dict(self.metadata), **changes)


def _params_arrays(params: Sequence[SlseParams]):
    params = list(params)
    if not params:
        raise ValueError("chain must contain at least one element")
    k1 = np.array([p.k1 for p in params])
    k2 = np.array([p.k2 for p in params])
    gamma = np.array([p.gamma for p in params])
    return k1, k2, gamma


def _relax(eps2, rate, gamma, h):
    """Exact solution of d(eps2)/dt = rate - gamma eps2 after time h."""
    decay = np.exp(-gamma * h)
    return eps2 * decay - (rate / gamma) * np.expm1(-gamma * h)


def step_exact(state: ChainState, params: Sequence[SlseParams], rate: float, h: float) -> ChainState:
    """Advance a chain by ``h`` seconds under a constant strain rate."""
    if not h > 0.0:
        raise ValueError(f"step must be positive, got {h!r}")
    _, _, gamma = _params_arrays(params)
    eps2 = _relax(np.asarray(state.eps2, dtype=float), rate, gamma, h)
    return ChainState(eps2, state.eps + rate * h, state.t + h)


def chain_force(params: Sequence[SlseParams], state: ChainState) -> float:
    k1, k2, _ = _params_arrays(params)
    return float(np.sum(k1) * state.eps + np.dot(k2, state.eps2))


def sample_times(profile: StrainProfile, dt: float | None = None) -> np.ndarray:
    """Uniform grid from the profile start, with every breakpoint inserted.

    Grid points closer than ``1e-6 dt`` to a breakpoint are replaced by it, so
    ramp ends are always sampled exactly.
    """
    dt = profile.dt if dt is None else dt
    t0, t1 = profile.times[0], profile.times[-1]
    n = int(np.floor((t1 - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    bp = profile.times
    idx = np.searchsorted(bp, grid)
    near = np.zeros(len(grid), dtype=bool)
    tol = 1e-6 * dt
    left = np.clip(idx - 1, 0, len(bp) - 1)
    right = np.clip(idx, 0, len(bp) - 1)
    near |= np.abs(grid - bp[left]) <= tol
    near |= np.abs(grid - bp[right]) <= tol
    return np.union1d(grid[~near], bp)


def simulate(chain: Sequence[SlseParams], profile: StrainProfile, rest_length: float | None = None,
             metadata: dict | None = None) -> ForceTrace:
    """Simulate the chain force under ``profile`` starting from steady state.

    Extension is reported in mm relative to the profile's initial strain,
    using ``rest_length`` (mm, the pressurized rest length) or the profile's
    ``rest_length_pressurized_mm`` metadata entry.
    """
    k1, k2, gamma = _params_arrays(chain)
    t = sample_times(profile)
    strain = profile.strain_at(t)
    eps2 = np.zeros((len(t), len(k1)))

    state = np.zeros(len(k1))
    bp = profile.times
    # first sample of each segment's (t_k, t_k+1] range
    bounds = np.searchsorted(t, bp, side="right")
    for k, rate in enumerate(profile.rates):
        lo, hi = bounds[k], bounds[k + 1]
        tau = t[lo:hi] - bp[k]
        eps2[lo:hi] = _relax(state[None, :], rate, gamma[None, :], tau[:, None])
        state = _relax(state, rate, gamma, bp[k + 1] - bp[k])

    force = strain * k1.sum() + eps2 @ k2

    meta = dict(profile.metadata)
    meta.update(metadata or {})
    if rest_length is None:
        rest_length = float(meta.get("rest_length_pressurized_mm", 1.0))
    meta["rest_length_pressurized_mm"] = rest_length
    meta.setdefault("dt", profile.dt)
    extension = (strain - profile.eps_start) * rest_length
    return ForceTrace(t, strain, extension, force, None, meta)


def element_forces(chain: Sequence[SlseParams], profile: StrainProfile) -> np.ndarray:
    """Per-element force columns, shape (n_samples, n_elements)."""
    cols = [simulate([p], profile, rest_length=1.0).force for p in chain]
    return np.column_stack(cols)


def add_noise(trace: ForceTrace, force_sigma: float, seed=None) -> ForceTrace:
    """Add i.i.d. zero-mean Gaussian noise to the force column."""
    if force_sigma < 0.0:
        raise ValueError("force_sigma must be non-negative")
    if force_sigma == 0.0:
        return trace.copy()
    rng = np.random.default_rng(seed)
    noisy = trace.force + rng.normal(0.0, force_sigma, size=len(trace))
    out = trace.copy(force=noisy)
    out.metadata["force_noise_sigma_N"] = force_sigma
    return out
