import numpy as np
import pytest

from aloe.rng import make_rng


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


def fixed_seed(*labels):
    return make_rng(99, *labels)


np.set_printoptions(precision=6, suppress=True)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
