import math
import sys
import os

import numpy as np
import pytest

os.environ.setdefault("NUMBA_NUM_THREADS", "1")

from ctflow.flowgen import FieldMovie, FlowParams, synthesize_channel_case  # noqa: E402
from ctflow.geometry import ChannelGeometry, GridSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk_movie(grid: GridSpec, radius: float, centre=(0.0, 0.0), value=1.0) -> FieldMovie:
    X, Y = grid.mesh()
    c = value * ((X - centre[0]) ** 2 + (Y - centre[1]) ** 2 <= radius**2).astype(float)
    return FieldMovie(grid, np.array([0.0]), 30.0, 1.5, c=c[None])


@pytest.fixture(scope="session")
def desk_channel():
    """1 s of the desk-scale channel case (256^2 over 12.8 cm)."""
    p = FlowParams(beta=1 / math.pi)
    grid = GridSpec.square(256, 12.8)
    movie = synthesize_channel_case(p, grid, 101, duration=1.0 / p.time_scale, geometry=ChannelGeometry(H=1.5, length=9.0),
                                    spinup=10.0)
    return p, movie


def pytest_terminal_summary(terminalreporter):
    """Collected acceptance verdicts, one line per criterion."""
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for n in sorted(report):
            terminalreporter.write_line(report[n])
