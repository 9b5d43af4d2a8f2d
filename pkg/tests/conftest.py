import numpy as np
import pytest

from mhdfem.assembly import build_spaces
from mhdfem.mesh import build_box_mesh
from mhdfem.mms import ExactSolution
from mhdfem.scheme import ProblemParams


@pytest.fixture(scope="session")
def mesh1():
    return build_box_mesh(1, 1, 1)


@pytest.fixture(scope="session")
def mesh2():
    return build_box_mesh(2, 2, 2)


@pytest.fixture(scope="session")
def spaces1(mesh1):
    return build_spaces(mesh1)


@pytest.fixture(scope="session")
def spaces2(mesh2):
    return build_spaces(mesh2)


@pytest.fixture(scope="session")
def exact():
    return ExactSolution()


@pytest.fixture(scope="session")
def params():
    return ProblemParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance verdicts: one line per criterion, repeated in the terminal summary ---

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` prints and records a PASS/FAIL line for criterion n."""
    store = request.config.stash.setdefault(_VERDICTS, [])

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        store.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
