import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from refracted_levy.levy_model import StepProfile, bm_a, cl_a

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_overflow():
    with np.errstate(over="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def cla():
    return cl_a()


@pytest.fixture
def bma():
    return bm_a()


@pytest.fixture
def two_step():
    return StepProfile((1.0, 2.0), (0.1, 0.2))


@pytest.fixture
def one_step():
    return StepProfile((1.0,), (0.1,))


_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: verdict(ok, detail)."""

    def record(ok, detail=""):
        line = f"{request.node.name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
