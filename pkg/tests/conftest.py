import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hlcurrents.currents import GridSpec
from hlcurrents.domain_maps import Bidisk, standard_map

settings.register_profile("hl", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hl")


@pytest.fixture(scope="session")
def f():
    return standard_map()


@pytest.fixture(scope="session")
def D():
    return Bidisk()


@pytest.fixture(scope="session")
def grid24(D):
    return GridSpec(D, 24)


@pytest.fixture(scope="session")
def grid32(D):
    return GridSpec(D, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label:<28} {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
