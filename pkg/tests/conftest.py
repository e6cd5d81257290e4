from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

ACCEPTANCE: dict[int, tuple[bool, str, str, float]] = {}


class Check:
    def __init__(self) -> None:
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line (pass/fail, detail, runtime)."""

    @contextmanager
    def run(number: int, title: str):
        chk = Check()
        start = time.perf_counter()
        try:
            yield chk
        except BaseException as exc:
            elapsed = time.perf_counter() - start
            detail = "; ".join(chk.notes + [f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"])
            ACCEPTANCE[number] = (False, title, detail, elapsed)
            raise
        ACCEPTANCE[number] = (True, title, "; ".join(chk.notes), time.perf_counter() - start)

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail, elapsed = ACCEPTANCE[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {title} ({elapsed:.3f} s) {detail}")
