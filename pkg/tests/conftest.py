import numpy as np
import pytest

from glinverse.experiments import initial_state
from glinverse.inverse import Control, InverseProblem
from glinverse.linsolve import assemble_cn
from glinverse.mesh import build_grid

A, B, P = 36e-4, 15e-4, 0.2 + 0.1j


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def make_problem(shape=(9, 9, 8), mode="full", eps=1e-5, seed=0, forcing_rule="left", a=A, b=B, p=P,
                 gradient_mode="exact", y0="sine"):
    """Small random instance with random complex data."""
    rng = np.random.default_rng(seed)
    grid = build_grid(1, 1, 1, *shape)
    ops = assemble_cn(grid, a, b, p)
    y0 = initial_state(y0, grid)
    problem = InverseProblem(grid, ops, y0, crandn(rng, grid.m), eps=eps, control_mode=mode,
                             forcing_rule=forcing_rule, gradient_mode=gradient_mode)
    return problem, rng


def random_control(problem, rng):
    grid = problem.grid
    if problem.control_mode == "full":
        return Control.full(crandn(rng, grid.Nt, grid.m))
    return Control.separable(crandn(rng, grid.m), np.ones(grid.Nt))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
