import numpy as np
import pytest

from ciprecode.modem import build_expansion, make_square_qam, map_bits


def random_channel(rng, K, Nt):
    return (rng.standard_normal((K, Nt)) + 1j * rng.standard_normal((K, Nt))) / np.sqrt(2)


def random_slot(rng, K, Nt, order=16):
    """Channel and symbol frame with uniformly random bits."""
    c = make_square_qam(order)
    bits = rng.integers(0, 2, K * c.bits_per_symbol)
    return random_channel(rng, K, Nt), build_expansion(map_bits(bits, c), c)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def qam16():
    return make_square_qam(16)


@pytest.fixture(scope="session")
def qam64():
    return make_square_qam(64)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
