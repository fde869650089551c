"""Standard linear solid elements and their closed-form force-velocity curves.

An SLSE is a parallel spring ``k1`` beside a series spring ``k2`` + damper
``eta`` branch.  Ramping the strain at a constant rate ``v_hat`` from steady
state for a strain increment ``d_eps`` and normalizing the final force by the
steady pre-ramp force gives the force-velocity (FV) value::

    FV(v) = 1 + sgn(v) d_eps/eps0 + dFV(v)
    dFV(v) = (v kappa / (eps0 gamma)) (1 - exp(-gamma d_eps / |v|))

with ``kappa = k2/k1`` and ``gamma = k2/eta``.  Parallel chains combine their
``dFV`` terms as a ``beta``-weighted mean, ``beta_i = k1_i / k1_control``.

Every function here accepts scalar or array velocities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq

ArrayLike = Union[float, np.ndarray]

CONTROL = "control"
SHEATH = "sheath"


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SlseParams:
    """Dimensional element: stiffnesses in N (per unit strain), damping in N*s."""

    k1: float
    k2: float
    eta: float

    def __post_init__(self):
        for name in ("k1", "k2", "eta"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    @property
    def kappa(self) -> float:
        return self.k2 / self.k1

    @property
    def gamma(self) -> float:
        return self.k2 / self.eta


@dataclass(frozen=True)
class NormalizedSlse:
    """Dimensionless element: stiffness ratio, inverse time constant [1/s], weight."""

    kappa: float
    gamma: float
    beta: float = 1.0

    def __post_init__(self):
        for name in ("kappa", "gamma", "beta"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))


@dataclass(frozen=True)
class RampSpec:
    """Ramp of magnitude ``d_eps`` starting from steady strain ``eps0``.

    The direction of the ramp is carried only by the sign of ``v_hat``.
    """

    eps0: float
    d_eps: float
    v_hat: float = 0.0

    def __post_init__(self):
        _positive("eps0", self.eps0)
        _positive("d_eps", self.d_eps)
        if not math.isfinite(self.v_hat):
            raise ValueError(f"v_hat must be finite, got {self.v_hat!r}")

    @property
    def duration(self) -> float:
        if self.v_hat == 0.0:
            return math.inf
        return self.d_eps / abs(self.v_hat)

    def at(self, v_hat: float) -> "RampSpec":
        return RampSpec(self.eps0, self.d_eps, v_hat)


@dataclass(frozen=True)
class SlseChain:
    """Parallel composition of elements, exactly one of which is the control."""

    elements: tuple = ()
    labels: tuple = field(default=())

    def __post_init__(self):
        elements = tuple(self.elements)
        if not elements:
            raise ValueError("chain must contain at least one element")
        labels = tuple(self.labels) if self.labels else (CONTROL,) + tuple(
            f"{SHEATH}{i}" if len(elements) > 2 else SHEATH for i in range(1, len(elements))
        )
        if len(labels) != len(elements):
            raise ValueError("labels and elements differ in length")
        if labels.count(CONTROL) != 1:
            raise ValueError("chain needs exactly one element labeled 'control'")
        if elements[labels.index(CONTROL)].beta != 1.0:
            raise ValueError("the control element must have beta == 1")
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def single(cls, kappa: float, gamma: float) -> "SlseChain":
        return cls((NormalizedSlse(kappa, gamma, 1.0),), (CONTROL,))

    @classmethod
    def pair(cls, control: NormalizedSlse, sheath: NormalizedSlse) -> "SlseChain":
        return cls((NormalizedSlse(control.kappa, control.gamma, 1.0), sheath), (CONTROL, SHEATH))

    @property
    def control(self) -> NormalizedSlse:
        return self.elements[self.labels.index(CONTROL)]

    @property
    def weights(self) -> np.ndarray:
        beta = np.array([e.beta for e in self.elements])
        return beta / beta.sum()

    def __len__(self):
        return len(self.elements)


def _as_chain(e) -> SlseChain:
    if isinstance(e, SlseChain):
        return e
    if isinstance(e, NormalizedSlse):
        return SlseChain((NormalizedSlse(e.kappa, e.gamma, 1.0),), (CONTROL,))
    raise TypeError(f"expected NormalizedSlse or SlseChain, got {type(e).__name__}")


# -- closed forms -------------------------------------------------------------


def saturation(x: ArrayLike) -> ArrayLike:
    """(1 - exp(-x)) / x for x >= 0, with the x -> 0 limit of 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0.0, -np.expm1(-x) / x, 1.0)
    out = np.where(np.isinf(x), 0.0, out)
    return out if out.ndim else float(out)


def delta_fv(kappa, gamma, eps0, d_eps, v_hat) -> ArrayLike:
    """Height of a single element's FV curve above the v = 0 jump.

    Evaluated as ``sgn(v) (kappa d_eps/eps0) g(gamma d_eps/|v|)`` with
    ``g(x) = (1 - e^-x)/x`` so both the slow and fast limits are free of
    cancellation.  Returns 0 at ``v_hat == 0``.
    """
    v = np.asarray(v_hat, dtype=float)
    speed = np.abs(v)
    with np.errstate(divide="ignore"):
        x = np.where(speed > 0.0, gamma * d_eps / np.where(speed > 0.0, speed, 1.0), np.inf)
    out = np.sign(v) * (kappa * d_eps / eps0) * saturation(x)
    out = out + 0.0  # normalizes -0.0
    return out if np.ndim(out) else float(out)


def slse_ramp_force(p: SlseParams, r: RampSpec, t: ArrayLike) -> ArrayLike:
    """Force of one element ``t`` seconds into a constant-rate ramp from steady state.

    F(t) = k1 (eps0 + v t) + v eta (1 - exp(-gamma t))
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("ramp time must be non-negative")
    viscous = r.v_hat * p.eta * -np.expm1(-p.gamma * t)
    out = p.k1 * (r.eps0 + r.v_hat * t) + viscous
    return out if out.ndim else float(out)


def dfv_single(e: NormalizedSlse, r: RampSpec) -> float:
    return delta_fv(e.kappa, e.gamma, r.eps0, r.d_eps, r.v_hat)


def fv_single(e: NormalizedSlse, r: RampSpec) -> float:
    """Normalized peak force; equals 1 at ``v_hat == 0`` (no ramp)."""
    if r.v_hat == 0.0:
        return 1.0
    return 1.0 + math.copysign(r.d_eps / r.eps0, r.v_hat) + dfv_single(e, r)


def fv_limits(r: RampSpec) -> tuple[float, float]:
    """One-sided limits of the FV curve at zero velocity: (v -> 0-, v -> 0+)."""
    jump = r.d_eps / r.eps0
    return 1.0 - jump, 1.0 + jump


def dfv_chain(chain: SlseChain, r: RampSpec, v_hat: ArrayLike | None = None) -> ArrayLike:
    """beta-weighted mean of the element dFV curves.

    ``v_hat`` overrides ``r.v_hat`` when given (arrays allowed).
    """
    chain = _as_chain(chain)
    v = r.v_hat if v_hat is None else v_hat
    total = 0.0
    for w, e in zip(chain.weights, chain.elements):
        total = total + w * delta_fv(e.kappa, e.gamma, r.eps0, r.d_eps, v)
    return total


def fv_chain(chain: SlseChain, r: RampSpec, v_hat: ArrayLike | None = None) -> ArrayLike:
    v = np.asarray(r.v_hat if v_hat is None else v_hat, dtype=float)
    out = 1.0 + np.sign(v) * (r.d_eps / r.eps0) + dfv_chain(chain, r, v)
    return out if out.ndim else float(out)


def dfv_asymptote(e, d_eps: float, eps0: float) -> float:
    """High-velocity plateau of dFV: (d_eps/eps0) times the beta-weighted kappa."""
    _positive("eps0", eps0)
    chain = _as_chain(e)
    beta = np.array([x.beta for x in chain.elements])
    kappa = np.array([x.kappa for x in chain.elements])
    return float(d_eps / eps0 * np.dot(beta, kappa) / beta.sum())


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got {alpha!r}")
    return alpha


def v_alpha_approx(e, d_eps: float, alpha: float) -> float:
    """Approximate strain rate at which dFV reaches ``alpha`` of its plateau.

    Single element: ``d_eps gamma / (2 (1 - alpha))``.  Chains replace gamma
    by its mean weighted with ``beta_i kappa_i``.
    """
    alpha = _check_alpha(alpha)
    chain = _as_chain(e)
    bk = np.array([x.beta * x.kappa for x in chain.elements])
    gamma = np.array([x.gamma for x in chain.elements])
    return float(d_eps / (2.0 * (1.0 - alpha)) * np.dot(bk, gamma) / bk.sum())


def achieved_fraction(e, d_eps: float, v_hat: ArrayLike) -> ArrayLike:
    """dFV(v) / dFV(inf) for v > 0; independent of eps0."""
    chain = _as_chain(e)
    bk = np.array([x.beta * x.kappa for x in chain.elements])
    v = np.asarray(v_hat, dtype=float)
    total = 0.0
    for w, x in zip(bk / bk.sum(), chain.elements):
        total = total + w * saturation(x.gamma * d_eps / v)
    return total


ALPHA_MAX = 1.0 - 1e-9


def v_alpha_exact(e, d_eps: float, alpha: float, rtol: float = 1e-10) -> float:
    """Strain rate at which dFV reaches exactly ``alpha`` of its plateau."""
    alpha = _check_alpha(alpha)
    if alpha > ALPHA_MAX:
        raise ValueError(f"alpha={alpha!r} is numerically indistinguishable from the asymptote")
    chain = _as_chain(e)
    gammas = [x.gamma for x in chain.elements]

    def f(log_v):
        return achieved_fraction(chain, d_eps, math.exp(log_v)) - alpha

    lo = math.log(min(gammas) * d_eps)
    hi = math.log(max(gammas) * d_eps)
    for _ in range(200):
        if f(lo) < 0.0:
            break
        lo -= 2.0
    for _ in range(200):
        if f(hi) > 0.0:
            break
        hi += 2.0
    if not (f(lo) < 0.0 < f(hi)):
        raise ValueError(f"could not bracket alpha={alpha!r}")
    return math.exp(brentq(f, lo, hi, xtol=rtol * 0.1, rtol=4 * np.finfo(float).eps, maxiter=500))


# -- parameter conversion -----------------------------------------------------


def normalize_params(dimensional: Sequence[SlseParams], k1_control: float) -> list[NormalizedSlse]:
    k1_control = _positive("k1_control", k1_control)
    return [NormalizedSlse(p.kappa, p.gamma, p.k1 / k1_control) for p in dimensional]


def denormalize_params(normalized: Sequence[NormalizedSlse], k1_control: float) -> list[SlseParams]:
    """Inverse of :func:`normalize_params`; ``k1_control`` fixes the force scale."""
    k1_control = _positive("k1_control", k1_control)
    out = []
    for e in normalized:
        k1 = e.beta * k1_control
        k2 = e.kappa * k1
        out.append(SlseParams(k1, k2, k2 / e.gamma))
    return out
