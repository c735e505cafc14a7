import contextlib

import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Context manager that records one acceptance line per criterion."""

    @contextlib.contextmanager
    def record(number, title):
        try:
            yield
        except BaseException as exc:
            ACCEPTANCE[number] = f"criterion {number:>2}: FAIL  {title} ({type(exc).__name__}: {exc})".splitlines()[0]
            print(ACCEPTANCE[number])
            raise
        ACCEPTANCE[number] = f"criterion {number:>2}: PASS  {title}"
        print(ACCEPTANCE[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
