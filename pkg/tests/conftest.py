import numpy as np
import pytest

from chainfactor import spinchain as sc


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tfim9():
    return sc.gibbs_state(sc.tfim(1.0, 1.0), 9, 1.0)


@pytest.fixture(scope="session")
def tfim8():
    return sc.gibbs_state(sc.tfim(1.0, 1.0), 8, 1.0)


@pytest.fixture(scope="session")
def tfim10():
    return sc.gibbs_state(sc.tfim(1.0, 1.0), 10, 1.0)


@pytest.fixture(scope="session")
def tfim12():
    return sc.gibbs_state(sc.tfim(1.0, 1.0), 12, 1.0)


@pytest.fixture(scope="session")
def classical8():
    return sc.gibbs_state(sc.classical_ising(1.0, 0.3), 8, 1.0)


@pytest.fixture(scope="session")
def product8():
    return sc.gibbs_state(sc.product_model(1.0, 0.5), 8, 1.0)


_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``ok`` so tests can assert on it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        print(line)
        request.config.stash[_RESULTS_KEY].append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
