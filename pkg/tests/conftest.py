import pytest

from deconav.episodes import generate_episode
from deconav.world import generate_world


@pytest.fixture(scope="session")
def world():
    return generate_world(101)


@pytest.fixture(scope="session")
def episodes(world):
    return [generate_episode(world, s) for s in range(40)]


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, name, ok, detail)``.

    A test that errors before recording is reported as failed.
    """
    mine = []

    def record(n, name, ok, detail=""):
        mine.append(n)
        _CRITERIA[n] = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        return ok

    yield record
    num = getattr(request.function, "criterion_number", None)
    if num is not None and num not in mine:
        _CRITERIA[num] = f"criterion {num:2d} FAIL  {request.node.name}: raised before a verdict"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
