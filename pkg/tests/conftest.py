import math

import numpy as np
import pytest

from ionbench.circuit import CNOT, CZ, Circuit, H, R, RZ, X, XX, Y, Z

ACCEPTANCE_LINES: list[str] = []

STANDARD_1Q = (H, X, Y, Z)


def random_standard_circuit(rng: np.random.Generator, n: int, depth: int) -> Circuit:
    """Random mix of standard and native gates on ``n`` qubits."""
    circ = Circuit(n)
    for _ in range(depth):
        q = int(rng.integers(n))
        kind = rng.integers(7 if n > 1 else 4)
        if kind == 0:
            circ.append(STANDARD_1Q[rng.integers(4)](q))
        elif kind == 1:
            circ.append(R(q, float(rng.uniform(-2 * math.pi, 2 * math.pi)), float(rng.uniform(-math.pi, math.pi))))
        elif kind == 2:
            circ.append(RZ(q, float(rng.uniform(-2 * math.pi, 2 * math.pi))))
        elif kind == 3:
            circ.append(R(q, float(rng.choice([math.pi / 2, math.pi, -math.pi / 2])), float(rng.choice([0, math.pi / 2]))))
        else:
            a, b = (int(x) for x in rng.choice(n, 2, replace=False))
            if kind == 4:
                circ.append(CNOT(a, b))
            elif kind == 5:
                circ.append(CZ(a, b))
            else:
                circ.append(XX(a, b, float(rng.choice([math.pi / 4, -math.pi / 4, rng.uniform(-1, 1)]))))
    return circ


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
