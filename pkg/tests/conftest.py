import sys

import numpy as np
import pytest

from neckflow.geometry import CylinderGraph, FlowState, FrameTag, StripGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cylinder_state():
    return FlowState(CylinderGraph.cylinder(-12.0, 12.0, 241), FrameTag("rescaled"), 0.0)


@pytest.fixture
def wide_grid():
    return StripGrid(-16.0, 16.0, 321, 1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS.values():
        terminalreporter.write_line(line)
