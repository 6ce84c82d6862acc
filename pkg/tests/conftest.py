import pytest

_LINES: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """Record named sub-results for an acceptance criterion; returns the recorder."""

    def record(number: int, ok: bool, note: str) -> bool:
        _LINES.setdefault(number, []).append((bool(ok), note))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        parts = _LINES[number]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        notes = "; ".join(f"{'ok' if ok else 'FAILED'}: {note}" for ok, note in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} ({notes})")
