import pytest

from tdm.ledger import MICRO, Issuance
from tdm.protocol import Engine, Rules
from tdm.structure import Params, new_structure

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "criterion", None)
    if crit is not None:
        _criteria[crit] = "PASS" if report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), verdict in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")


def make_engine(allocation=None, issuance=Issuance.MINING, rules=None, **params):
    """Engine over a fresh structure; allocation is in display tokens."""
    allocation = {"alice": 100} if allocation is None else allocation
    td = new_structure(Params(**params), {a: v * MICRO for a, v in allocation.items()}, issuance)
    return Engine(td, rules or Rules())


@pytest.fixture
def engine():
    return make_engine()
