import numpy as np
import pytest

from mvgpt.model import MVGPT
from mvgpt.selfcheck import tiny_config


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_model():
    return MVGPT(tiny_config(init_std=0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria[num] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, verdict = _criteria[num]
        terminalreporter.write_line(f"{verdict}  {num:2d}  {title}")
