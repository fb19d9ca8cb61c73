import math
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


def binomial_5sigma(k: int, n: int, p: float) -> bool:
    """True when k successes out of n are within 5 sigma of a Binomial(n, p) mean."""
    sigma = math.sqrt(n * p * (1 - p))
    return abs(k - n * p) <= 5 * sigma


@pytest.fixture
def rng():
    return np.random.default_rng(20060501)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
