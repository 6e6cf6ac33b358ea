import numpy as np
import pytest

from sbl_aml import ProblemInstance


def random_instance(rng, m_max=12, n_max=20, zero_frac=0.25):
    """Random problem with a gamma vector that contains exact zeros."""
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(1, n_max + 1))
    F = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    beta = float(10 ** rng.uniform(-1, 1))
    gamma = rng.exponential(1.0, n)
    gamma[rng.random(n) < zero_frac] = 0.0
    return ProblemInstance(F, y, beta), gamma


def instances(seed, count, **kw):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, **kw) for _ in range(count)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
