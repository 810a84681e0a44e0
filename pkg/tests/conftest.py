import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinforge.model import SystemParams
from spinforge.noise import NoiseSpec

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def spec():
    return NoiseSpec()


def random_unitary(rng, n=4):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


#: criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def record():
    def _record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(ok), detail)
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 14):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:2d}: FAIL  not evaluated")
