import contextlib

import pytest

_ACCEPTANCE = {}


class _Record:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""


@pytest.fixture
def acceptance():
    """Context manager that records one pass/fail line per criterion."""

    @contextlib.contextmanager
    def criterion(number, title):
        rec = _Record(number, title)
        try:
            yield rec
        except BaseException as exc:
            _ACCEPTANCE[number] = f"FAIL  {number:>2}. {title}: {exc}".splitlines()[0]
            print(_ACCEPTANCE[number])
            raise
        _ACCEPTANCE[number] = f"PASS  {number:>2}. {title}" + (f" ({rec.detail})" if rec.detail else "")
        print(_ACCEPTANCE[number])

    return criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
