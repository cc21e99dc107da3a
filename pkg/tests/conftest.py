"""Shared test helpers: acceptance-criterion result recording.

Acceptance tests wrap their assertions in ``criterion(...)`` so that a
single PASS/FAIL line per criterion is printed in the terminal summary,
regardless of output capturing.
"""

from contextlib import contextmanager

import pytest

_RESULTS: list[tuple[str, str, str]] = []


@contextmanager
def _criterion(tag: str, name: str):
    """Record one acceptance criterion outcome; re-raises on failure."""
    try:
        yield
    except BaseException as exc:
        _RESULTS.append((tag, name, f"FAIL ({type(exc).__name__})"))
        raise
    else:
        _RESULTS.append((tag, name, "PASS"))


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag, name, status in _RESULTS:
        terminalreporter.write_line(f"{status} [{tag}] {name}")
