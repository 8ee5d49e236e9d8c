import numpy as np
import pytest

from xmodal.dataio import FeatureSet, PairedDataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_pair(XA, XB, labels):
    return PairedDataset(FeatureSet.from_matrix(XA, labels), FeatureSet.from_matrix(XB, labels))


# acceptance criteria: one PASS/FAIL line each in the terminal summary
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, title = mark.args
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[n] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"[{status}] {n}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
