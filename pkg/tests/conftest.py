"""Per-criterion PASS/FAIL summary for the acceptance module."""

from __future__ import annotations

from collections import defaultdict

import pytest

_CRITERIA: dict[int, str] = {}
_OUTCOMES: dict[int, list[bool]] = defaultdict(list)


def pytest_collection_modifyitems(items: list[pytest.Item]) -> None:
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA[number] = title
            item.user_properties.append(("criterion", number))


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES[number].append(report.passed)


def pytest_terminal_summary(terminalreporter) -> None:
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        results = _OUTCOMES.get(number)
        if not results:
            verdict = "NOT RUN"
        else:
            verdict = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {_CRITERIA[number]} ({len(results or [])} test(s))")
