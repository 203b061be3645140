import pytest

# criterion number -> [title, ok, details]
_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``record(number, title, ok, detail)`` for the acceptance summary."""

    def record(number, title, ok, detail=""):
        entry = _ACCEPTANCE.setdefault(number, [title, True, []])
        entry[1] = entry[1] and bool(ok)
        if detail:
            entry[2].append(detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, details = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += ": " + "; ".join(details)
        terminalreporter.write_line(line)
