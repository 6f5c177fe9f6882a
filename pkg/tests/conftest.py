import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def symmetric_matrices(draw, min_dim=1, max_dim=12, scale=10.0):
    n = draw(st.integers(min_dim, max_dim))
    a = draw(arrays(np.float64, (n, n), elements=st.floats(-scale, scale, allow_nan=False, width=64)))
    return 0.5 * (a + a.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary: one line per criterion ---------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        n = int(name.split("_")[2])
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA.setdefault(n, []).append((report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        status = "PASS" if all(o == "passed" for o, _ in results) else "FAIL"
        detail = "; ".join(d for _, d in results if d)
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
