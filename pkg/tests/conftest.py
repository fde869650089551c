import numpy as np
import pytest

from vmafv import ProtocolConfig, build_protocol, simulate
from vmafv.slse import NormalizedSlse, denormalize_params


def bisect(f, lo, hi, tol=1e-15, max_iter=400):
    """Plain bisection, used as an independent root-finding oracle."""
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(abs(mid), 1.0):
            break
    return 0.5 * (lo + hi)


@pytest.fixture(scope="session")
def paper_cfg():
    return ProtocolConfig()


@pytest.fixture(scope="session")
def paper_profile(paper_cfg):
    return build_protocol(paper_cfg)


@pytest.fixture(scope="session")
def control_truth():
    return NormalizedSlse(3.0, 2.0)


@pytest.fixture(scope="session")
def control_trace(paper_profile, control_truth):
    return simulate(denormalize_params([control_truth], 10.0), paper_profile)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance as acc
    except ImportError:
        return
    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(acc.RESULTS):
        ok, detail = acc.RESULTS[i]
        terminalreporter.write_line(acc.format_line(i, ok, detail))
