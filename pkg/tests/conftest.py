import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import run_pipeline  # noqa: E402

_criteria = {}


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    return out, run_pipeline(out)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = ", ".join(f"{k}={v}" for k, v in item.user_properties)
    _criteria[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}"
                                    + (f"  [{detail}]" if detail else ""))
