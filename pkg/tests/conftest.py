import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pslip.grid import Domain
from pslip.linear import ConstantsEstimate

settings.register_profile("pslip", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pslip")


@pytest.fixture(scope="session")
def dom32():
    return Domain(1.0, 0.7, 32, 32)


@pytest.fixture(scope="session")
def dom16():
    return Domain(1.0, 0.7, 16, 16)


@pytest.fixture(scope="session")
def consts():
    # representative sampled values on the 32x32 grid for q = 4
    return ConstantsEstimate(Cq_disc=1.41, Chat_disc=0.35, korn_disc=0.64, q=4.0, samples=0, method="fixed")


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


ACCEPT_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Print one PASS/FAIL line for an acceptance criterion, keep it for the summary, then assert."""
    def record(k, title, passed, detail):
        line = f"[ACCEPT {k:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print("\n" + line)
        request.config.stash.setdefault(ACCEPT_LINES, []).append(line)
        assert passed, f"criterion {k} ({title}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPT_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
