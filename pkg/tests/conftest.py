import pytest

_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one verdict line immediately and again in the terminal summary."""

    def emit(label: str, ok: bool, detail: str) -> None:
        line = f"{label}: {'PASS' if ok else 'FAIL'} - {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    def note(label: str, detail: str) -> None:
        line = f"{label}: {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    emit.note = note
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
