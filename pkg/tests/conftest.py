import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
