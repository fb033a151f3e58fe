"""Collects one PASS/FAIL line per acceptance criterion for the run summary."""

from contextlib import contextmanager

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        LINES.append(f"FAIL criterion {number}: {title}")
        raise
    LINES.append(f"PASS criterion {number}: {title}")
