from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance line, PASS or FAIL, with wall time."""
    lines = request.config.stash.setdefault(_LINES, [])

    @contextmanager
    def record(label: str):
        detail: list[str] = []
        start = time.perf_counter()
        try:
            yield detail
        except BaseException:
            lines.append(f"FAIL  {label} {' '.join(detail)} ({time.perf_counter() - start:.1f}s)")
            print(lines[-1])
            raise
        lines.append(f"PASS  {label} {' '.join(detail)} ({time.perf_counter() - start:.1f}s)")
        print(lines[-1])

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
