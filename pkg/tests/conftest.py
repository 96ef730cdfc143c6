import numpy as np
import pytest

from crem import builtin_profile


@pytest.fixture(scope="session")
def brw():
    return builtin_profile("brw")


@pytest.fixture(scope="session")
def square():
    return builtin_profile("square")


@pytest.fixture(scope="session")
def concave_square():
    return builtin_profile("concave_square")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def report(capsys):
    """Emit one PASS/FAIL line per acceptance criterion."""

    def emit(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
