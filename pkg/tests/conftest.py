import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_cs(rng, q):
    from mrcs.core import CsParams
    return CsParams(float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.0, 0.95)))


def random_spd(rng, q):
    A = rng.standard_normal((q, q))
    return A @ A.T + q * 0.1 * np.eye(q)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(label, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
