import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unbiasedmc.samplers import BlackScholes, Heston  # noqa: E402
from unbiasedmc.variance import LadderPool  # noqa: E402

BS_SEED = 20240611


@pytest.fixture(scope="session")
def bs_spec():
    return BlackScholes(r=0.05, sigma=0.2, s0=1.0, maturity=1.0, strike=1.0)


@pytest.fixture(scope="session")
def bs_pool(bs_spec):
    """5e5 Black-Scholes ladders at level 10, shared by the desk-scale tests."""
    return LadderPool(bs_spec, proxy_level=10, samples=500_000, seed=BS_SEED)


@pytest.fixture(scope="session")
def heston_pool():
    return LadderPool(Heston(), proxy_level=10, samples=500_000, seed=BS_SEED + 1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
