import numpy as np
import pytest

from pvqsample import DataMatrix

# criterion number -> (verdict, title, detail); verdict None means skipped
_ACCEPTANCE: dict[int, tuple[bool | None, str, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of an acceptance criterion for the final report."""

    def record(number: int, title: str, passed: bool | None, detail: str = "") -> bool | None:
        _ACCEPTANCE[number] = (None if passed is None else bool(passed), title, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, title, detail = _ACCEPTANCE[number]
        verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"[{verdict}] {number}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blobs2d(rng):
    """Two well separated 2-D clusters of 100 and 50 points."""
    a = rng.normal([0.0, 0.0], 0.5, size=(100, 2))
    b = rng.normal([10.0, 3.0], 0.5, size=(50, 2))
    return DataMatrix(np.vstack([a, b]))
