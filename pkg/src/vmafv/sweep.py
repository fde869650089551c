"""Analytic FV grids and one-parameter sweeps over chain parameters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .slse import (
    CONTROL,
    NormalizedSlse,
    RampSpec,
    SlseChain,
    delta_fv,
    dfv_asymptote,
    dfv_chain,
    v_alpha_approx,
    v_alpha_exact,
)

SWEEPABLE = ("kappa", "gamma", "beta")


def velocity_grid(vmin: float, vmax: float, n: int, mirror: bool = True) -> np.ndarray:
    """Log-spaced shortening velocities in [vmin, vmax], mirrored to negative values.

    ``n == 1`` yields the single velocity ``vmin`` with no mirror.
    """
    if not (vmin > 0.0 and vmax > 0.0):
        raise ValueError("vmin and vmax must be positive")
    if vmin >= vmax:
        raise ValueError("vmin must be smaller than vmax")
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        return np.array([vmin])
    pos = np.logspace(math.log10(vmin), math.log10(vmax), n)
    return np.concatenate([-pos[::-1], pos]) if mirror else pos


def analytic_fv_rows(chain: SlseChain, eps0: float, d_eps: float, velocities: np.ndarray):
    """Rows of (shortening velocity, strain rate, FV, dFV)."""
    ramp = RampSpec(eps0, d_eps)
    v_hat = -np.asarray(velocities, dtype=float)
    dfv = np.asarray(dfv_chain(chain, ramp, v_hat))
    fv = 1.0 + np.sign(v_hat) * d_eps / eps0 + dfv
    return list(zip(velocities.tolist(), v_hat.tolist(), fv.tolist(), dfv.tolist()))


def fv_header(chain: SlseChain, eps0: float, d_eps: float) -> dict:
    return {
        "model": f"{len(chain)}-SLSE",
        "eps0": eps0,
        "d_eps": d_eps,
        "dfv_asymptote": dfv_asymptote(chain, d_eps, eps0),
        "v_alpha_0.9_approx": v_alpha_approx(chain, d_eps, 0.9),
        "v_alpha_0.9_exact": v_alpha_exact(chain, d_eps, 0.9),
    }


@dataclass(frozen=True)
class SweepSpec:
    base: SlseChain
    parameter: str
    element: str
    values: tuple
    eps0: float
    d_eps: float
    vmin: float = 1e-4
    vmax: float = 1e2
    n: int = 60

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValueError(f"parameter: must be one of {SWEEPABLE}, got {self.parameter!r}")
        if self.element not in self.base.labels:
            raise ValueError(f"element: {self.element!r} not in chain labels {self.base.labels}")
        if self.parameter == "beta" and self.element == CONTROL:
            raise ValueError("element: the control element's beta is fixed at 1")
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("values: grid must not be empty")
        if any(not (math.isfinite(v) and v > 0.0) for v in values):
            raise ValueError("values: all grid values must be positive")
        object.__setattr__(self, "values", values)
        RampSpec(self.eps0, self.d_eps)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        base = d["base"]
        elements = base["elements"] if isinstance(base, dict) else base
        labels = tuple(e.get("label", CONTROL if i == 0 else f"sheath{i}") for i, e in enumerate(elements))
        chain = SlseChain(tuple(NormalizedSlse(e["kappa"], e["gamma"], e.get("beta", 1.0)) for e in elements),
                          labels)
        ramp = d.get("ramp", {})
        grid = d.get("grid", {})
        return cls(chain, d["parameter"], d.get("element", CONTROL), tuple(d["values"]),
                   float(ramp.get("eps0", 0.05)), float(ramp.get("d_eps", 0.02)),
                   float(grid.get("vmin", 1e-4)), float(grid.get("vmax", 1e2)), int(grid.get("n", 60)))

    def chain_at(self, value: float) -> SlseChain:
        i = self.base.labels.index(self.element)
        elements = list(self.base.elements)
        elements[i] = replace(elements[i], **{self.parameter: value})
        return SlseChain(tuple(elements), self.base.labels)


def curve_distance(chain: SlseChain, reference: SlseChain, eps0: float, d_eps: float, v_hat) -> float:
    """Max |dFV_chain - dFV_reference| over the given strain rates."""
    ramp = RampSpec(eps0, d_eps)
    diff = np.asarray(dfv_chain(chain, ramp, v_hat)) - np.asarray(dfv_chain(reference, ramp, v_hat))
    return float(np.max(np.abs(diff)))


def _strictly_increasing(x) -> bool:
    return bool(np.all(np.diff(np.asarray(x, dtype=float)) > 0.0))


def run_sweep(spec: SweepSpec, workers: int = 1):
    """Evaluate every grid value; returns (entries, checks).

    Each entry holds the chain, its FV rows and scalar summaries.  The checks
    are orderings of computed values over the sorted grid.
    """
    velocities = velocity_grid(spec.vmin, spec.vmax, spec.n)
    v_hat = -velocities
    control = spec.base.control
    control_chain = SlseChain.single(control.kappa, control.gamma)

    def one(value):
        chain = spec.chain_at(value)
        header = fv_header(chain, spec.eps0, spec.d_eps)
        return {
            "value": value,
            "chain": chain,
            "rows": analytic_fv_rows(chain, spec.eps0, spec.d_eps, velocities),
            "header": header,
            "distance_to_control": curve_distance(chain, control_chain, spec.eps0, spec.d_eps, v_hat),
        }

    ordered = sorted(spec.values)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(one, ordered))
    else:
        entries = [one(v) for v in ordered]

    asym = [e["header"]["dfv_asymptote"] for e in entries]
    checks = {}
    if spec.parameter == "kappa":
        checks["asymptote_strictly_increasing_with_kappa"] = _strictly_increasing(asym)
        bk = []
        for e in entries:
            beta = np.array([x.beta for x in e["chain"].elements])
            kappa = np.array([x.kappa for x in e["chain"].elements])
            bk.append(float(beta @ kappa / beta.sum()))
        ratio = np.array(asym) / np.array(bk)
        checks["asymptote_proportional_to_weighted_kappa"] = bool(np.allclose(ratio, ratio[0], rtol=1e-12))
    elif spec.parameter == "gamma":
        va = [e["header"]["v_alpha_0.9_exact"] for e in entries]
        checks["v_alpha_increasing_with_gamma"] = _strictly_increasing(va)
        v_ref = math.sqrt(spec.vmin * spec.vmax)
        i = spec.base.labels.index(spec.element)
        heights = [delta_fv(spec.base.elements[i].kappa, g, spec.eps0, spec.d_eps, v_ref) for g in ordered]
        checks["dfv_decreasing_with_gamma_at_fixed_rate"] = _strictly_increasing(heights[::-1])
    else:
        i = spec.base.labels.index(spec.element)
        others = [e for j, e in enumerate(spec.base.elements) if j != i]
        rest = sum(e.beta * e.kappa for e in others) / sum(e.beta for e in others)
        direction = np.sign(spec.base.elements[i].kappa - rest)
        checks["asymptote_moves_toward_swept_kappa_with_beta"] = (
            _strictly_increasing(direction * np.array(asym)) if direction != 0 else bool(np.ptp(asym) == 0.0)
        )
        dist = [e["distance_to_control"] for e in entries]
        checks["distance_to_control_increasing_with_beta"] = _strictly_increasing(dist)
    return entries, checks
