import numpy as np
import pytest

from ilb_evolve import make_instance

_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Record one acceptance line; the lines are repeated in the run summary."""

    def _record(number, title, passed, detail):
        line = f"ACCEPTANCE {number:02d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def so3():
    return make_instance("so3")


@pytest.fixture(scope="session")
def gl2():
    return make_instance("gl:2")


@pytest.fixture(scope="session")
def abelian3():
    return make_instance("abelian:3")


@pytest.fixture(scope="session")
def loop16():
    return make_instance("loop:16,4")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
