import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from privforest import hecore
from privforest.hecore import HeParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def keys():
    return hecore.keygen(rng=np.random.default_rng(12345))


@pytest.fixture
def small_params():
    return HeParams(slot_count=1024)


@pytest.fixture
def small_keys(small_params):
    return hecore.keygen(small_params, np.random.default_rng(7))
