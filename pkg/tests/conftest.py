import numpy as np
import pytest

from sedlab.lattice import Grid, rasterize
from sedlab.pointgen import PointSet, sample_hardcore_poisson


def manual_points(points, L, rho=3.0):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return PointSet(pts, rho, float(L), pts.shape[1], 0, "manual")


@pytest.fixture(scope="session")
def small3d():
    """d=3, n=32, h=0.25 hardcore geometry shared by several solver tests."""
    grid = Grid(3, 32, 0.25)
    ps = sample_hardcore_poisson(3, grid.L, 3.0, 1.0, 11)
    return rasterize(ps, grid)


@pytest.fixture(scope="session")
def tiny2d():
    grid = Grid(2, 8, 0.25)
    return rasterize(manual_points([[0.61, 0.93]], grid.L), grid, strict=False)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
