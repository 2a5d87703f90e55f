import numpy as np
import pytest

from _instances import fixture_basis

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def fixture1():
    return fixture_basis()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def record_criterion(request):
    """record_criterion(number, passed, detail) -> passed"""
    log = request.config.stash[_CRITERIA]

    def record(number, passed, detail):
        log.append((number, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
