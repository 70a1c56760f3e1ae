import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from entropy_sgd.data import mnist5k_path
from entropy_sgd.objective import Dataset

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _have_mnist5k():
    try:
        return mnist5k_path().exists()
    except FileNotFoundError:
        return False


HAVE_MNIST5K = _have_mnist5k()
needs_mnist5k = pytest.mark.skipif(not HAVE_MNIST5K, reason="bundled 5k MNIST sample (mlxtend) not installed")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    r = np.random.default_rng(7)
    inputs = r.standard_normal((24, 5))
    labels = np.arange(24) % 3
    return Dataset(inputs, labels, 3)


# -- acceptance report -----------------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
