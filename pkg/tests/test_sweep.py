import numpy as np
import pytest

from vmafv.slse import NormalizedSlse, SlseChain, dfv_chain, RampSpec
from vmafv.sweep import SweepSpec, curve_distance, run_sweep, velocity_grid


def spec(parameter, values, element="control", base=None):
    base = base or SlseChain.pair(NormalizedSlse(10.0, 50.0), NormalizedSlse(2.0, 5.0, 1.0))
    return SweepSpec(base, parameter, element, tuple(values), 0.05, 0.02, 1e-4, 1e4, 40)


def test_velocity_grid():
    g = velocity_grid(1e-2, 1e2, 5)
    assert len(g) == 10
    assert np.allclose(g[5:], [1e-2, 1e-1, 1, 10, 100])
    assert np.array_equal(g[:5], -g[5:][::-1])
    assert np.array_equal(velocity_grid(0.5, 2.0, 1), [0.5])
    with pytest.raises(ValueError):
        velocity_grid(2.0, 2.0, 3)


def test_kappa_sweep_proportional():
    entries, checks = run_sweep(spec("kappa", [1, 5, 10, 40], base=SlseChain.single(10.0, 50.0)))
    asym = np.array([e["header"]["dfv_asymptote"] for e in entries])
    assert np.allclose(asym / np.array([1, 5, 10, 40]), 0.4, rtol=1e-14)
    assert all(checks.values())


def test_gamma_sweep_v_alpha_proportional():
    values = np.logspace(-2, 2, 9)
    entries, checks = run_sweep(spec("gamma", values, base=SlseChain.single(10.0, 50.0)))
    va = np.array([e["header"]["v_alpha_0.9_exact"] for e in entries])
    assert np.allclose(va / values, va[0] / values[0], rtol=1e-8)
    assert all(checks.values())


def test_small_gamma_flattens():
    ramp = RampSpec(0.05, 0.02)
    v = np.array([1e-2, 1e-1, 1.0])
    flat = dfv_chain(SlseChain.single(10.0, 1e-6), ramp, v)
    assert np.ptp(flat) / flat.max() < 1e-5


def test_beta_sweep_amplifies_sheath():
    entries, checks = run_sweep(spec("beta", [0.1, 0.5, 1, 3, 10], element="sheath"))
    assert checks["distance_to_control_increasing_with_beta"]
    assert checks["asymptote_moves_toward_swept_kappa_with_beta"]
    d = [e["distance_to_control"] for e in entries]
    assert d == sorted(d)


def test_sweep_threads_match_serial():
    s = spec("kappa", [1, 2, 3], element="sheath")
    a, _ = run_sweep(s)
    b, _ = run_sweep(s, workers=3)
    assert [e["rows"] for e in a] == [e["rows"] for e in b]


def test_spec_validation():
    with pytest.raises(ValueError):
        spec("eta", [1])
    with pytest.raises(ValueError):
        spec("beta", [1], element="control")
    with pytest.raises(ValueError):
        spec("kappa", [])
    with pytest.raises(ValueError):
        spec("kappa", [-1.0])


def test_curve_distance_zero_for_same_chain():
    c = SlseChain.single(3.0, 4.0)
    assert curve_distance(c, c, 0.05, 0.02, np.array([0.1, 1.0])) == 0.0
