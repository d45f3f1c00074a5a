import numpy as np
import pytest

from bidomain_bddc.assembly import Discretization, State
from bidomain_bddc.geometry import build_conductivity, build_fibers, build_slab
from bidomain_bddc.partition import build_dof_partition, decompose
from bidomain_bddc.schur import SchurOperator, build_local_systems


def make_disc(nx, ny, nz, lengths=None, lumped=False):
    lengths = lengths or (0.02 * nx, 0.02 * ny, 0.02 * nz)
    mesh = build_slab(nx, ny, nz, lengths)
    return Discretization(mesh, build_conductivity(build_fibers(mesh)), lumped=lumped)


def random_state(n, rng, scale=1.0):
    return State(scale * 100 * rng.random(n), scale * 10 * rng.standard_normal(n), scale * rng.random(n))


def schur_setup(disc, grid, primal="ve", state=None, tau=0.05):
    dec = decompose(disc.mesh, *grid)
    part = build_dof_partition(dec, primal=primal)
    state = state or State.rest(disc.n_nodes)
    locals_ = build_local_systems(disc, part, state, tau)
    return dec, part, locals_, SchurOperator(part, locals_)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disc4():
    return make_disc(4, 4, 4)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
