import numpy as np
import pytest

from lkreg.problems import add_noise, get_problem


@pytest.fixture(scope="session")
def fredholm():
    return get_problem("fredholm-64-8")


@pytest.fixture(scope="session")
def weak_nl():
    return get_problem("weak-nl-64-8-a05")


@pytest.fixture(scope="session")
def noisy_fredholm(fredholm):
    return add_noise(fredholm, [1e-2] * fredholm.N, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Records one PASS/FAIL line per acceptance criterion."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {label}  {detail}".rstrip()
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
