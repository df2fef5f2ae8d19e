import contextlib

import pytest

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    @contextlib.contextmanager
    def _run(number: int, title: str):
        detail = []
        try:
            yield detail
        except BaseException:
            _CRITERIA[number] = ("FAIL", title, "; ".join(detail))
            raise
        _CRITERIA[number] = ("PASS", title, "; ".join(detail))

    return _run


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
