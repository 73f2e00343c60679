import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wienergmc.config import ExperimentConfig
from wienergmc.noise import LatticeSpec, build_mollifier

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def phi3():
    return build_mollifier(3, 1.0)


@pytest.fixture(scope="session")
def phi1():
    return build_mollifier(1, 1.0)


@pytest.fixture(scope="session")
def desk3():
    return LatticeSpec.desk(3, 1.0)


@pytest.fixture(scope="session")
def small_cfg():
    return ExperimentConfig().with_overrides(["run.replicas=20", "run.paths=100", "run.pairs=200"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record ``(number, ok, detail)`` as one PASS/FAIL line and fail the test if not ok."""

    def report(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
