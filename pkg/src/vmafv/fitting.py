"""Two-stage identification of SLSE parameters from FV curves.

Stage 1 fits (kappa, gamma) of the bare actuator.  Stage 2 freezes those and
fits (kappa_s, gamma_s, beta_s) of the sheath in the two-element chain.  Both
use a Levenberg-Marquardt iteration on log-parameters with the analytic
Jacobian of the closed-form FV model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import FvCurve
from .slse import NormalizedSlse, RampSpec, SlseChain, delta_fv, fv_chain, saturation

WEAK_FACTOR = 10.0  # stderr > 10x value -> weakly identified
RANK_RTOL = 1e-7  # relative singular value below which a direction is unidentifiable
LOG_BOUND = 50.0  # |log parameter| cap keeps exp() finite
SHEATH_BETA_STARTS = (0.25, 1.0, 4.0)
CHI2_95 = 3.841458820694124  # 95% quantile of chi-square with 1 dof


class FitError(ValueError):
    pass


@dataclass
class FitProblem:
    """Data and settings for one (actuator, pressure) fit.

    ``v_hat`` are extension strain rates [1/s] (negative of the shortening
    velocities stored in curves) and ``fv`` the normalized peak forces.
    """

    v_hat: np.ndarray
    fv: np.ndarray
    eps0: float
    d_eps: float
    arity: int = 1
    frozen_control: NormalizedSlse | None = None
    max_iter: int = 200
    rtol: float = 1e-10

    def __post_init__(self):
        self.v_hat = np.asarray(self.v_hat, dtype=float)
        self.fv = np.asarray(self.fv, dtype=float)
        if self.v_hat.shape != self.fv.shape or self.v_hat.ndim != 1:
            raise FitError("velocity and FV arrays must be 1-D and equal length")
        if not (self.eps0 > 0.0 and self.d_eps > 0.0):
            raise FitError("eps0 and d_eps must be positive")
        if np.any(self.v_hat == 0.0):
            raise FitError("zero-velocity points carry no FV information")
        if self.arity not in (1, 2):
            raise FitError("arity must be 1 or 2")
        if self.arity == 2 and self.frozen_control is None:
            raise FitError("stage 2 requires frozen control parameters")

    @classmethod
    def from_curve(cls, curve: FvCurve, arity: int = 1, frozen_control: NormalizedSlse | None = None,
                   use_means: bool = False, **kwargs) -> "FitProblem":
        c = curve.means() if use_means else curve
        return cls(-c.velocities(), c.fv(), curve.eps0, curve.d_eps, arity, frozen_control, **kwargs)

    @property
    def delta(self) -> np.ndarray:
        """Data height above the zero-velocity jump."""
        return self.fv - 1.0 - np.sign(self.v_hat) * self.d_eps / self.eps0


@dataclass
class FitResult:
    kappa: float
    gamma: float
    beta: float | None
    rss: float
    r2: float
    n_iter: int
    converged: bool
    stderr: dict
    flags: list = field(default_factory=list)
    control: NormalizedSlse | None = None
    history: list = field(default_factory=list)

    @property
    def element(self) -> NormalizedSlse:
        return NormalizedSlse(self.kappa, self.gamma, 1.0 if self.beta is None else self.beta)

    @property
    def chain(self) -> SlseChain:
        if self.control is None:
            return SlseChain.single(self.kappa, self.gamma)
        return SlseChain.pair(self.control, self.element)

    @property
    def params(self) -> dict:
        out = {"kappa": self.kappa, "gamma": self.gamma}
        if self.beta is not None:
            out["beta"] = self.beta
        return out


def r_squared(model, data) -> float:
    model = np.asarray(model, dtype=float)
    data = np.asarray(data, dtype=float)
    if model.shape != data.shape or data.size < 2:
        raise ValueError("need equal-length arrays with at least 2 values")
    ss_tot = float(np.sum((data - data.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("data has zero variance; R^2 is undefined")
    return 1.0 - float(np.sum((data - model) ** 2)) / ss_tot


# -- model and Jacobian -------------------------------------------------------


def _element_terms(kappa, gamma, eps0, d_eps, v_hat):
    """dFV and its derivatives w.r.t. log kappa and log gamma."""
    s = np.sign(v_hat)
    x = gamma * d_eps / np.abs(v_hat)
    amp = s * kappa * d_eps / eps0
    g = saturation(x)
    value = amp * g
    return value, value, amp * (np.exp(-x) - g)


def _model(theta, prob: FitProblem):
    """Return (dFV model, Jacobian w.r.t. log-params)."""
    eps0, d_eps, v = prob.eps0, prob.d_eps, prob.v_hat
    if prob.arity == 1:
        kappa, gamma = np.exp(theta)
        val, dk, dg = _element_terms(kappa, gamma, eps0, d_eps, v)
        return val, np.column_stack([dk, dg])
    kappa, gamma, beta = np.exp(theta)
    c = prob.frozen_control
    fc = delta_fv(c.kappa, c.gamma, eps0, d_eps, v)
    fs, dk, dg = _element_terms(kappa, gamma, eps0, d_eps, v)
    ws = beta / (1.0 + beta)
    val = (1.0 - ws) * fc + ws * fs
    dbeta = beta / (1.0 + beta) ** 2 * (fs - fc)
    return val, np.column_stack([ws * dk, ws * dg, dbeta])


def levenberg_marquardt(fun, theta0, max_iter=200, rtol=1e-10, lam0=1e-3, bound=None):
    """Minimize ||r(theta)||^2 for ``fun(theta) -> (r, J)``.

    Only steps that lower the residual sum of squares are accepted.  Trial
    points are clipped to ``[-bound, bound]`` when ``bound`` is given.  Returns
    ``(theta, rss, n_iter, converged, history)``.
    """
    theta = np.asarray(theta0, dtype=float)
    r, J = fun(theta)
    rss = float(r @ r)
    history = [rss]
    lam = lam0
    converged = False
    it = 0
    tiny = 1e-30 * max(1, len(r))
    while it < max_iter:
        it += 1
        if rss <= tiny:
            converged = True
            break
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        diag[diag <= 0.0] = 1.0
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            if bound is not None:
                trial = np.clip(trial, -bound, bound)
            r_new, J_new = fun(trial)
            rss_new = float(r_new @ r_new)
            if np.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        drop = rss - rss_new
        theta, r, J, rss = trial, r_new, J_new, rss_new
        history.append(rss)
        lam = max(lam / 3.0, 1e-15)
        if drop <= rtol * history[-2]:
            converged = True
            break
    return theta, rss, it, converged, history


def _diagnostics(theta, prob: FitProblem, names):
    """Curvature standard errors plus a boundary check for unbounded directions.

    A parameter whose log can be pushed to either bound while raising the RSS
    by less than the 95% chi-square(1) threshold is not bounded by the data;
    its uncertainty proxy is reported as infinite.
    """
    val, J = _model(theta, prob)
    n, p = J.shape
    r = val - prob.delta
    rss = float(r @ r)
    sigma2 = rss / max(n - p, 1)
    _, sv, vt = np.linalg.svd(J, full_matrices=False)
    keep = sv > RANK_RTOL * sv[0] if sv.size and sv[0] > 0 else np.zeros(p, bool)
    rank_def = not np.all(keep)
    var_log = (vt[keep].T ** 2) @ (sigma2 / sv[keep] ** 2) if np.any(keep) else np.zeros(p)
    # parameters loading on a null direction get no finite error bar
    null_load = np.abs(vt[~keep]).max(axis=0) if rank_def else np.zeros(p)
    se_log = np.where(null_load > 1e-6, math.inf, np.sqrt(var_log))

    floor = n * (1e-10 * max(float(np.max(np.abs(prob.delta))), 1e-300)) ** 2
    threshold = CHI2_95 * sigma2 + floor
    unbounded = []
    for i in range(p):
        for edge in (-LOG_BOUND, LOG_BOUND):
            t = np.array(theta, dtype=float)
            t[i] = edge
            r_edge = _model(t, prob)[0] - prob.delta
            if float(r_edge @ r_edge) - rss <= threshold:
                unbounded.append(i)
                break

    values = np.exp(theta)
    stderr = {}
    flags = []
    for i, (name, v, s) in enumerate(zip(names, values, se_log)):
        # delta method on the log-parameterization
        stderr[name] = float(v * s) if math.isfinite(s) and i not in unbounded else math.inf
        if not math.isfinite(stderr[name]) or stderr[name] > WEAK_FACTOR * v:
            flags.append(f"{name}_weakly_identified")
    if rank_def:
        flags.append("rank_deficient")
    if prob.arity == 2:
        c = prob.frozen_control
        fc = delta_fv(c.kappa, c.gamma, prob.eps0, prob.d_eps, prob.v_hat)
        fs = delta_fv(values[0], values[1], prob.eps0, prob.d_eps, prob.v_hat)
        same = np.max(np.abs(fs - fc)) <= 1e-6 * max(float(np.max(np.abs(fc))), 1e-300)
        if same or 2 in unbounded:
            flags.append("beta_unidentifiable")
    return stderr, flags


def _run(prob: FitProblem, theta0, names):
    target = prob.delta

    def fun(theta):
        val, J = _model(theta, prob)
        return val - target, J

    theta, rss, n_iter, converged, history = levenberg_marquardt(fun, theta0, prob.max_iter, prob.rtol,
                                                                   bound=LOG_BOUND)
    values = np.exp(theta)
    model_fv = prob.fv - target + _model(theta, prob)[0]
    try:
        r2 = r_squared(model_fv, prob.fv)
    except ValueError:
        r2 = math.nan
    stderr, flags = _diagnostics(theta, prob, names)
    if not converged:
        flags.append("not_converged")
    return values, rss, r2, n_iter, converged, stderr, flags, history


# -- initialization -----------------------------------------------------------


def _speed_groups(v_hat: np.ndarray):
    speeds = np.abs(v_hat)
    order = np.unique(np.round(speeds, 12))
    # merge speeds that differ only by fitting jitter
    groups = []
    for s in order:
        if groups and math.isclose(s, groups[-1][-1], rel_tol=0.02):
            groups[-1].append(s)
        else:
            groups.append([s])
    centers = np.array([np.mean(g) for g in groups])
    labels = np.argmin(np.abs(speeds[:, None] - centers[None, :]), axis=1)
    return centers, labels


def init_from_data(v_hat, delta, eps0: float, d_eps: float) -> tuple[float, float]:
    """(kappa0, gamma0) from the fastest and an intermediate speed group.

    The fastest group is treated as the plateau (kappa0 = |dFV| eps0/d_eps).
    The group nearest 40% of the top speed supplies the achieved fraction
    alpha, and gamma0 inverts ``v_alpha = d_eps gamma / (2 (1 - alpha))``.
    """
    v_hat = np.asarray(v_hat, float)
    delta = np.asarray(delta, float)
    centers, labels = _speed_groups(v_hat)
    if len(centers) < 2:
        raise FitError("initialization needs at least two distinct speeds")
    fast = len(centers) - 1
    plateau = float(np.mean(np.abs(delta[labels == fast])))
    kappa0 = max(plateau * eps0 / d_eps, 1e-6)
    mid = int(np.argmin(np.abs(centers[:-1] - 0.4 * centers[-1])))
    alpha = float(np.mean(np.abs(delta[labels == mid]))) / max(plateau, 1e-300)
    alpha = min(max(alpha, 0.05), 0.99)
    gamma0 = 2.0 * (1.0 - alpha) * centers[mid] / d_eps
    return kappa0, max(gamma0, 1e-6)


def init_control(curve: FvCurve, d_eps: float | None = None, eps0: float | None = None) -> tuple[float, float]:
    d_eps = curve.d_eps if d_eps is None else d_eps
    eps0 = curve.eps0 if eps0 is None else eps0
    v_hat = -curve.velocities()
    delta = curve.fv() - 1.0 - np.sign(v_hat) * d_eps / eps0
    return init_from_data(v_hat, delta, eps0, d_eps)


def _check_points(prob: FitProblem, minimum: int):
    if len(np.unique(prob.v_hat)) < minimum:
        raise FitError(f"need at least {minimum} distinct velocity points, got {len(np.unique(prob.v_hat))}")


def fit_control(problem: FitProblem) -> FitResult:
    """Stage 1: fit (kappa, gamma) of a single element."""
    if problem.arity != 1:
        raise FitError("fit_control expects a 1-SLSE problem")
    _check_points(problem, 4)
    k0, g0 = init_from_data(problem.v_hat, problem.delta, problem.eps0, problem.d_eps)
    values, rss, r2, n_iter, conv, se, flags, hist = _run(problem, np.log([k0, g0]), ("kappa", "gamma"))
    return FitResult(float(values[0]), float(values[1]), None, rss, r2, n_iter, conv, se, flags, None, hist)


def _sheath_starts(problem: FitProblem):
    """Initial log-parameters for the multi-start sheath fit.

    For each trial beta the control contribution is removed from the data,
    leaving an estimate of the sheath curve that feeds the 1-element initializer.
    """
    c = problem.frozen_control
    delta_c = delta_fv(c.kappa, c.gamma, problem.eps0, problem.d_eps, problem.v_hat)
    starts = []
    for beta0 in SHEATH_BETA_STARTS:
        delta_s = ((1.0 + beta0) * problem.delta - delta_c) / beta0
        try:
            k0, g0 = init_from_data(problem.v_hat, delta_s, problem.eps0, problem.d_eps)
        except FitError:
            continue
        starts.append(np.log([k0, g0, beta0]))
    k0, g0 = init_from_data(problem.v_hat, problem.delta, problem.eps0, problem.d_eps)
    starts.append(np.log([k0, g0, 1.0]))
    return starts


def fit_sheath(problem: FitProblem) -> FitResult:
    """Stage 2: fit (kappa_s, gamma_s, beta_s) with the control element frozen."""
    if problem.arity != 2:
        raise FitError("fit_sheath expects a 2-SLSE problem")
    _check_points(problem, 4)
    control = problem.frozen_control
    best = None
    for theta0 in _sheath_starts(problem):
        run = _run(problem, theta0, ("kappa", "gamma", "beta"))
        if best is None or run[1] < best[1]:
            best = run
    values, rss, r2, n_iter, conv, se, flags, hist = best
    return FitResult(float(values[0]), float(values[1]), float(values[2]), rss, r2, n_iter, conv, se, flags,
                     control, hist)


def fit_curve(curve: FvCurve, stage: str = "control", control: NormalizedSlse | None = None,
              use_means: bool = False, **kwargs) -> FitResult:
    if stage == "control":
        return fit_control(FitProblem.from_curve(curve, 1, None, use_means, **kwargs))
    if stage == "sheath":
        if control is None:
            raise FitError("sheath stage requires control parameters")
        return fit_sheath(FitProblem.from_curve(curve, 2, control, use_means, **kwargs))
    raise FitError(f"unknown stage {stage!r}")


def model_fv(result: FitResult, eps0: float, d_eps: float, v_hat) -> np.ndarray:
    """FV values of the fitted chain at extension strain rates ``v_hat``."""
    return fv_chain(result.chain, RampSpec(eps0, d_eps), v_hat)
