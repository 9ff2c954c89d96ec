import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vinn.data import synth_demoset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``acceptance(n, name, ok, detail)``."""

    def record(n: int, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[n] = (name, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
    passed = sum(ok for _, ok, _ in _ACCEPTANCE.values())
    terminalreporter.write_line(f"{passed}/{len(_ACCEPTANCE)} criteria passed")


@pytest.fixture(scope="session")
def small_train():
    return synth_demoset("expert", 8, 11)


@pytest.fixture(scope="session")
def small_test():
    return synth_demoset("expert", 3, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
