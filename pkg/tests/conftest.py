import math

import numpy as np
import pytest

from iqpgen import exact
from iqpgen.bits import BitMatrix
from iqpgen.circuit import random_gateset

_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _reset_exact_limit():
    yield
    exact.set_exact_limit(exact.DEFAULT_EXACT_LIMIT)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_circuit(rng, n, m, max_weight=None):
    gates = random_gateset(n, min(m, 2**n - 1), rng, max_weight=max_weight)
    params = rng.uniform(0, 2 * math.pi, len(gates))
    return gates, params


def random_bits(rng, rows, n, p=0.5):
    return BitMatrix.from_array((rng.random((rows, n)) < p).astype(np.uint8))
