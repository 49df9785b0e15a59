import time
from contextlib import contextmanager

import pytest

_results: dict[int, tuple[bool, str, float]] = {}


@pytest.fixture
def criterion():
    """Context manager that records one acceptance line: ``with criterion(3, "text"):``."""

    @contextmanager
    def run(number: int, title: str):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            _results[number] = (ok, title, elapsed)
            print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.2f} s)")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        ok, title, elapsed = _results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.2f} s)")
    passed = sum(ok for ok, _, _ in _results.values())
    terminalreporter.write_line(f"{passed}/{len(_results)} criteria met")
