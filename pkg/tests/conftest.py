from __future__ import annotations

import numpy as np
import pytest

from himos.world import GridSpec


@pytest.fixture
def grid():
    return GridSpec(50.0, 50.0, 0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, text: str) -> None:
    ACCEPTANCE[number] = (passed, text)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
