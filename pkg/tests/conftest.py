import time
from contextlib import contextmanager

import pytest

from gradcheck import ReluPatterns

_RESULTS: dict[int, tuple[str, bool, float, float, str]] = {}


class Criterion:
    """Times one acceptance criterion and remembers whether it held."""

    def __init__(self, number: int, title: str, limit_s: float):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.detail = ""

    def note(self, text: str) -> None:
        self.detail = text


@pytest.fixture
def relu(monkeypatch):
    return ReluPatterns(monkeypatch)


@pytest.fixture
def criterion():
    @contextmanager
    def run(number: int, title: str, limit_s: float):
        c = Criterion(number, title, limit_s)
        start = time.perf_counter()
        ok = False
        try:
            yield c
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = elapsed < limit_s
            _RESULTS[number] = (title, ok and within, elapsed, limit_s, c.detail)
        assert within, f"criterion {number} took {elapsed:.1f} s, limit {limit_s:.0f} s"

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, elapsed, limit, detail = _RESULTS[n]
        status = "PASS" if ok else "FAIL"
        extra = f" | {detail}" if detail else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title} ({elapsed:.1f} s of {limit:.0f} s){extra}")
