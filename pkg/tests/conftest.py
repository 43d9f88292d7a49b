import numpy as np
import pytest

from sdoh_eventkit.schema import LabelInventory

# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def inv():
    return LabelInventory()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
