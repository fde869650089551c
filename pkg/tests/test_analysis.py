import math
import warnings

import numpy as np
import pytest

from vmafv.analysis import (
    FvCurve,
    FvPoint,
    RampWindow,
    SegmentationError,
    build_fv_curve,
    extract_fv_point,
    fit_ramp_velocity,
    segment_ramps,
    synchronize,
)
from vmafv.protocol import ProtocolConfig, build_protocol
from vmafv.slse import NormalizedSlse, RampSpec, SlseChain, denormalize_params, fv_chain, fv_single
from vmafv.timesim import ForceTrace, add_noise, simulate


def short_cfg(**kw):
    base = dict(velocities=(2.0,), hold=5.0, settle=5.0, precondition_amplitude=0.0, return_rate=1.0,
                repetitions=1)
    base.update(kw)
    return ProtocolConfig(**base)


def trace_for(cfg, chain=None, k1c=10.0):
    chain = chain or denormalize_params([NormalizedSlse(3.0, 2.0)], k1c)
    return simulate(chain, build_protocol(cfg))


def test_ten_windows_on_paper_protocol(control_trace, paper_cfg):
    cfg = ProtocolConfig(repetitions=1)
    tr = trace_for(cfg)
    windows = segment_ramps(tr, cfg)
    assert len(windows) == 10
    assert [w.direction for w in windows[:2]] == ["extend", "shorten"]
    for w in windows:
        assert w.reach_time > w.start_time
        assert math.copysign(1, w.velocity) == (1 if w.direction == "extend" else -1)
        assert abs(abs(w.velocity) - w.nominal_speed) <= 1e-9 * w.nominal_speed
    assert len(segment_ramps(control_trace, paper_cfg)) == 50


def test_missing_ramp_is_an_error():
    cfg = short_cfg(velocities=(2.0, 4.0))
    tr = trace_for(cfg)
    # freeze the machine through the second extension ramp
    bad_cfg = short_cfg(velocities=(2.0, 4.0))
    ramps = [w for w in segment_ramps(tr, cfg)]
    w = ramps[2]
    ext = tr.extension.copy()
    sel = (tr.time >= w.start_time - 0.1) & (tr.time <= w.reach_time + 4.0)
    ext[sel] = ext[w.start_index - 20]
    broken = tr.copy(extension=ext)
    with pytest.raises(SegmentationError, match=r"found 3 ramps, expected 4"):
        segment_ramps(broken, bad_cfg)


def test_fit_ramp_velocity_noiseless():
    cfg = short_cfg()
    tr = trace_for(cfg)
    w = segment_ramps(tr, cfg)[0]
    assert fit_ramp_velocity(tr, w) == pytest.approx(2.0, rel=1e-9)


def test_fit_ramp_velocity_noisy_extension():
    cfg = short_cfg()
    tr = trace_for(cfg)
    base = segment_ramps(tr, cfg)[0]
    assert base.reach_index - base.start_index >= 100
    errs = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        noisy = tr.copy(extension=tr.extension + rng.normal(0, 0.01, len(tr)))
        w = segment_ramps(noisy, cfg)[0]
        errs.append(abs(fit_ramp_velocity(noisy, w) / 2.0 - 1))
    assert max(errs) < 0.01


def with_overshoot(tr, w, frac=0.05):
    """Inject an extension/force overshoot right after target reach."""
    t = tr.time
    after = t > w.reach_time
    bump = np.where(after, np.exp(-(t - w.reach_time - 0.1) ** 2 / 0.002), 0.0)
    ext = tr.extension + frac * 2.0 * bump
    force = tr.force + 0.5 * tr.force.max() * bump
    return tr.copy(extension=ext, force=force)


def test_overshoot_does_not_bias_slope_or_peak():
    cfg = short_cfg()
    tr = trace_for(cfg)
    w = segment_ramps(tr, cfg)[0]
    over = with_overshoot(tr, w)
    w2 = segment_ramps(over, cfg)[0]
    assert w2.reach_index == w.reach_index
    assert over.force[w2.reach_index + 1:].max() > over.force[w2.reach_index]
    assert abs(fit_ramp_velocity(over, w2) / 2.0 - 1) < 0.005
    p_clean = extract_fv_point(tr, w, 70.3)
    p_over = extract_fv_point(over, w2, 70.3)
    assert p_over.fv == p_clean.fv


def test_fv_point_matches_model_value():
    # kappa=10, gamma=50, eps0=0.05, d_eps=0.02, v_hat=1 -> 3.929
    Lp = 100.0
    cfg = short_cfg(velocities=(100.0,), rest_length_pressurized=Lp, rest_length_unpressurized=105.0, dt=0.001)
    chain = denormalize_params([NormalizedSlse(10.0, 50.0)], 2.0)
    tr = simulate(chain, build_protocol(cfg))
    w_ext, w_sh = segment_ramps(tr, cfg)
    p = extract_fv_point(tr, w_ext, Lp)
    want = fv_single(NormalizedSlse(10.0, 50.0), RampSpec(0.05, 0.02, 1.0))
    assert p.fv == pytest.approx(want, rel=1e-9)
    assert p.fv == pytest.approx(3.929, abs=1e-3)
    assert p.velocity == pytest.approx(-1.0, rel=1e-9)
    q = extract_fv_point(tr, w_sh, Lp)
    assert q.velocity == pytest.approx(1.0, rel=1e-9)
    assert q.fv == pytest.approx(2.0 - want, rel=1e-9)


def test_fv_point_errors():
    cfg = short_cfg()
    tr = trace_for(cfg)
    w = segment_ramps(tr, cfg)[0]
    with pytest.raises(ValueError, match="not positive"):
        extract_fv_point(tr.copy(force=tr.force - 100.0), w, 70.3)
    late = RampWindow(w.ramp_id, 10, float(tr.time[10]), w.reach_index, w.reach_time, w.velocity, w.direction,
                      0.0, w.nominal_speed)
    with pytest.raises(ValueError, match="history"):
        extract_fv_point(tr, late, 70.3)
    short = RampWindow(w.ramp_id, 100, float(tr.time[100]), w.reach_index, w.reach_time, w.velocity,
                       w.direction, 0.0, w.nominal_speed)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        extract_fv_point(tr, short, 70.3)
    assert rec


def test_window_validation():
    with pytest.raises(ValueError):
        RampWindow(0, 5, 1.0, 4, 0.9, 2.0, "extend", 0.0, 2.0)
    with pytest.raises(ValueError):
        RampWindow(0, 5, 1.0, 9, 2.0, -2.0, "extend", 0.0, 2.0)


def test_sign_convention_and_fv_above_one(control_trace, paper_cfg):
    curve = build_fv_curve(control_trace, paper_cfg)
    for p in curve.points:
        if p.direction == "extend":
            assert p.velocity < 0 and p.fv > 1
        else:
            assert p.velocity > 0 and p.fv < 1


def test_round_trip_two_element_chain():
    # every element must relax within the 30 s holds for the steady-state start to hold
    cfg = ProtocolConfig(velocities=(1.0, 3.0, 9.0), repetitions=1, precondition_amplitude=0.0)
    c, s = NormalizedSlse(4.0, 1.5), NormalizedSlse(12.0, 1.0, 0.7)
    tr = simulate(denormalize_params([c, s], 5.0), build_protocol(cfg))
    curve = build_fv_curve(tr, cfg)
    vh = -curve.velocities()
    model = fv_chain(SlseChain.pair(c, s), RampSpec(curve.eps0, curve.d_eps), vh)
    assert np.allclose(curve.fv(), model, rtol=1e-6)


def test_identical_repetitions_have_zero_std(control_trace, paper_cfg):
    curve = build_fv_curve(control_trace, paper_cfg)
    groups = curve.groups()
    assert len(groups) == 10
    assert all(g.n == 5 for g in groups)
    assert all(g.fv_std == pytest.approx(0.0, abs=1e-12) for g in groups)


def test_aggregation_of_identical_points():
    pts = [FvPoint(-0.1, 1.7, 20.0, i, "extend", 7.0) for i in range(4)]
    g = FvCurve(pts, {20.0: (0.3, 0.03)}).groups()[0]
    assert (g.fv_mean, g.fv_std, g.n) == (1.7, 0.0, 4)


def test_noisy_group_std_matches_propagation(control_trace, paper_cfg):
    sigma = 0.01
    curve = build_fv_curve(add_noise(control_trace, sigma, seed=5), paper_cfg)
    f0 = np.array([p.f0 for p in curve.points]).mean()
    n0 = 200
    for g in curve.groups():
        # var(peak/F0) ~ (sigma/F0)^2 (1 + FV^2/n0)
        pred = sigma / f0 * math.sqrt(1 + g.fv_mean ** 2 / n0)
        assert g.fv_std <= 3 * pred
    stds = np.array([g.fv_std for g in curve.groups()])
    preds = np.array([sigma / f0 * math.sqrt(1 + g.fv_mean ** 2 / n0) for g in curve.groups()])
    assert 1 / 3 < np.sqrt(np.mean(stds ** 2)) / np.sqrt(np.mean(preds ** 2)) < 3


def machine_with_step(t_step, duration=20.0, dt=0.01):
    t = np.arange(0.0, duration, dt)
    force = np.where(t >= t_step, 5.0, 0.5)
    zeros = np.zeros_like(t)
    return ForceTrace(t, zeros, zeros, force)


def test_sync_identity():
    tr = machine_with_step(7.0)
    p = np.linspace(0, 20, len(tr))
    out = synchronize(tr, (tr.time, p), offset=0.0)
    assert np.array_equal(out.pressure, p)


def test_sync_constant_log():
    tr = machine_with_step(7.0)
    out = synchronize(tr, (np.array([-50.0, 50.0]), np.array([20.0, 20.0])), offset=3.3)
    assert np.all(out.pressure == 20.0)


def test_sync_estimates_step_offset():
    tr = machine_with_step(7.0)
    lt = np.arange(0.0, 15.0, 0.1)
    lp = np.where(lt >= 5.0, 20.0, 0.0)
    out = synchronize(tr, (lt, lp))
    assert out.metadata["pressure_offset_s"] == pytest.approx(2.0, abs=0.1)


def test_sync_disjoint_ranges():
    tr = machine_with_step(7.0)
    with pytest.raises(ValueError, match="overlap"):
        synchronize(tr, (np.array([100.0, 101.0]), np.array([1.0, 2.0])), offset=0.0)
