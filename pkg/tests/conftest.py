import numpy as np
import pytest
from hypothesis import settings

from golden_cases import small_setup

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# A small, quick model shared by the unit tests. The acceptance suite trains
# the full-size default model separately.
@pytest.fixture(scope="session")
def small():
    return small_setup()  # (train, test, task)


@pytest.fixture(scope="session")
def small_data(small):
    return small[0], small[1]


@pytest.fixture(scope="session")
def small_task(small):
    return small[2]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------------

_criteria: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria.setdefault(mark.args[0], []).append((item.name, "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        status = "PASS" if all(s == "PASS" for _, s in results) else "FAIL"
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {n:2d}: {status}  ({names})")
