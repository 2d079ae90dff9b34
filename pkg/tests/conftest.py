import numpy as np
import pytest

from drstrat.discrete import Grid, Pmf, Stratification, reference_from_nominals
from drstrat.problem import Problem, toy_problem


@pytest.fixture(scope="session")
def toy():
    return toy_problem()


def random_pmf(rng, n, floor=0.0):
    w = rng.dirichlet(np.ones(n)) + floor
    return w / w.sum()


def small_problem(rng, n_points=5, K=2, M=2, total=20):
    """Random positive reference problem on a tiny grid."""
    grid = Grid(np.sort(rng.uniform(0, 5, n_points)) + np.arange(n_points) * 1e-3)
    noms = tuple(Pmf(grid, random_pmf(rng, n_points, 0.05)) for _ in range(M))
    return Problem(
        grid,
        Stratification.equal_contiguous(n_points, K),
        total,
        noms,
        reference_from_nominals(noms),
        rng.uniform(0.05, 0.95, n_points),
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
