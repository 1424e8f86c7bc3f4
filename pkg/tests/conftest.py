import numpy as np
import pytest

from bhtsparse.model import Dictionary, sample_dictionary


def orthonormal_square(m, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((m, m)))
    return Dictionary(q)


@pytest.fixture
def small_dict():
    return sample_dictionary(8, 12, 1234)


@pytest.fixture
def ortho_dict():
    return orthonormal_square(6)


@pytest.fixture(scope="session")
def large_dict():
    return sample_dictionary(256, 512, 2024).warm()


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, title, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
