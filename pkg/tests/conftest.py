import math

import numpy as np
import pytest

from dirac_vacua.geometry import GridSpec, MetricFamily
from dirac_vacua.spin_algebra import make_clifford


def const_profile(v):
    return lambda x: np.full(np.shape(x), float(v))


def custom_family(h=None, c=None, b=None, m=None, mu=1.5, static=False, name="custom",
                  h_inf=1.0, m_inf=1.0, c_inf=None):
    """Family from explicit evaluators; unspecified fields are flat (h = c = m = 1, b = 0)."""
    one = lambda t, x: np.ones(np.shape(x), dtype=np.result_type(t, float))
    zero = lambda t, x: np.zeros(np.shape(x), dtype=np.result_type(t, float))
    c_prof = c_inf if c_inf is not None else const_profile(1.0)
    profiles = {}
    for side in ("out", "in"):
        profiles[f"h_{side}"] = const_profile(h_inf)
        profiles[f"m_{side}"] = const_profile(m_inf)
        profiles[f"c_{side}"] = c_prof
    return MetricFamily(name, h or one, c or one, b or zero, m or one, profiles, mu=mu,
                        shift_free=b is None, lapse_trivial=c is None,
                        lapse_static=True, static=static)


@pytest.fixture(scope="session")
def rep():
    return make_clifford()


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16, t_max=40.0)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32, t_max=160.0)


def bracket(t):
    return math.sqrt(1.0 + t * t)


_CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    def record(number, title, ok, detail):
        _CRITERIA[number] = (title, ok, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
