import sys
from collections import OrderedDict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> [title, outcomes, details]
_CRITERIA: "OrderedDict[int, list]" = OrderedDict()


@pytest.fixture
def criterion(request):
    """Tag a test as (part of) an acceptance criterion and attach measured details."""
    def tag(number: int, title: str):
        request.node.user_properties.append(("criterion", (number, title)))

        def note(text: str):
            request.node.user_properties.append(("detail", text))
        return note
    return tag


def _outcome(report) -> str:
    if hasattr(report, "wasxfail"):
        return "FAIL (expected: " + report.wasxfail + ")" if report.skipped else "FAIL"
    return "PASS" if report.passed else "FAIL"


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = props["criterion"]
        entry = _CRITERIA.setdefault(number, [title, [], []])
        entry[1].append(_outcome(report))
        entry[2].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes, details = _CRITERIA[number]
        failed = [o for o in outcomes if o != "PASS"]
        status = failed[0] if failed else "PASS"
        extra = f" [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(f"criterion {number:2d} {title}: {status}{extra}")
