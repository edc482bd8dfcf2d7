import logging

import pytest

_VERDICTS: list = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; printed again in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    logging.getLogger("spcawsr").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
