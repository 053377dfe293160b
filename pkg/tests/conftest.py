from pathlib import Path

import pytest

from ppacdc.graph import load_graph

FIXTURES = Path(__file__).parent / "fixtures"

# One "PASS"/"FAIL" line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def fixture_graph(name: str):
    return load_graph(FIXTURES / f"{name}.graph")


@pytest.fixture
def verdict():
    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
