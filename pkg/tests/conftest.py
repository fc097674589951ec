import numpy as np
import pytest

from zkflat.domain import Grid, Params, make_basis, sample_function
from zkflat.freeflow import evolve_free, modes_from_field
from zkflat.genfun import build_table
from zkflat.synthesis import (TargetSpec, assemble_control, null_flat_output, reach_coefficients,
                              reach_flat_output)


def two_mode_initial(x, y):
    return x * (x + 1) * np.sin(np.pi * y) + 0.5 * x * (x + 1) * np.sin(2 * np.pi * y)


REACH_TERMS = ((0, 1, 1.0), (1, 2, 0.3))


class NullRun:
    def __init__(self, p: Params):
        self.p = p
        self.grid = Grid.from_params(p)
        self.basis = make_basis(p.J_max)
        self.table = build_table(p, self.basis)
        self.u0 = sample_function(two_mode_initial, self.grid)
        self.evs = evolve_free(modes_from_field(self.u0.values, self.grid.y_nodes, self.basis), p)
        self.z = null_flat_output(self.evs, p)
        self.h = assemble_control(self.table, self.z, self.grid)


class ReachRun:
    def __init__(self, p: Params):
        self.p = p
        self.grid = Grid.from_params(p)
        self.basis = make_basis(p.J_max)
        self.table = build_table(p, self.basis)
        self.target = TargetSpec(terms=REACH_TERMS)
        self.b = reach_coefficients(self.target, self.table, self.basis)
        self.z = reach_flat_output(self.b, p)
        self.h = assemble_control(self.table, self.z, self.grid)


@pytest.fixture(scope="session")
def params():
    return Params()


@pytest.fixture(scope="session")
def basis(params):
    return make_basis(params.J_max)


@pytest.fixture(scope="session")
def table(params, basis):
    return build_table(params, basis)


@pytest.fixture(scope="session")
def null_run(params):
    return NullRun(params)


@pytest.fixture(scope="session")
def reach_run(params):
    return ReachRun(params)


ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
