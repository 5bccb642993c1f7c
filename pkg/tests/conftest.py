import numpy as np
import pytest

from goblend import demos
from goblend.environment import MicroRally


@pytest.fixture(scope="session")
def env():
    return MicroRally()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, env):
    """Four synthetic expert sessions on the default track."""
    out = tmp_path_factory.mktemp("ds4")
    demos.generate_synthetic(out, demos.SyntheticConfig(sessions=4), seed=3, env=env)
    return out


@pytest.fixture(scope="session")
def small_sessions(small_dataset):
    return demos.load_dataset(small_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the outcome."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record
