import numpy as np
import pytest

from ikforge.chain import BUILTIN_CHAINS, builtin_chain


@pytest.fixture(scope="session", params=BUILTIN_CHAINS)
def chain(request):
    return builtin_chain(request.param)


@pytest.fixture(scope="session")
def planar3():
    return builtin_chain("planar3")


@pytest.fixture(scope="session")
def arm6():
    return builtin_chain("arm6")


@pytest.fixture(scope="session")
def chain15():
    return builtin_chain("chain15")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
