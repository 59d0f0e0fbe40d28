import pytest

# verdict lines collected by the acceptance suite, replayed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record ``criterion N: PASS|FAIL  detail`` and return the pass flag."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
