"""Shared small cases for the test suite."""

import numpy as np
import pytest

from wellfas.fluid import FluidModel
from wellfas.grid import build_cartesian_mesh
from wellfas.wells import WellSet


def box_case(nx, ny, nz, wells, seed=0, h=(1.0, 1.0, 1.0), k=1e-13, heterogeneous=True, gamma=2.0):
    """Cartesian box with optional random permeability; ``wells`` are (name, control, target, [ijk...])."""
    n = nx * ny * nz
    rng = np.random.default_rng(seed)
    perm = k * 10.0 ** rng.uniform(-1, 1, n) if heterogeneous else np.full(n, k)
    mesh = build_cartesian_mesh(nx, ny, nz, *h, perm, np.full(n, 0.2))
    entries = [dict(name=name, control=ctl, target=tgt, perforations=[list(p) for p in perfs])
               for name, ctl, tgt, perfs in wells]
    return mesh, WellSet.from_config(entries, mesh), FluidModel(gamma=gamma)


def random_state(op, rng, s_lo=0.05, s_hi=0.95, p0=1e6, dp=1e5, q=1e-5):
    """Random state with fluxes bounded away from zero (no upwind switch nearby)."""
    lay = op.layout

    def flux(n):
        return q * rng.choice([-1.0, 1.0], n) * rng.uniform(0.2, 1.0, n)

    return lay.join(flux(lay.n_faces), flux(lay.n_perfs),
                    p0 + dp * rng.standard_normal(lay.n_cells), p0 + dp * rng.standard_normal(lay.n_wells),
                    rng.uniform(s_lo, s_hi, lay.n_cells))


def fd_jacobian(op, x, dt, w_sprev):
    """Fourth-order central differences, step relative to each entry."""
    n = len(x)
    cols = []
    for j in range(n):
        h = 1e-4 * abs(x[j]) if x[j] else 1e-6
        e = np.zeros(n)
        e[j] = h
        r = [op.residual(x + c * e, dt, w_sprev) for c in (-2, -1, 1, 2)]
        cols.append((8 * (r[2] - r[1]) - (r[3] - r[0])) / (12 * h))
    return np.stack(cols, axis=1)


def jacobian_error(op, x, dt, w_sprev):
    """Max relative error of the analytic Jacobian, entrywise against the row scale."""
    J = op.jacobian(x, dt).toarray()
    F = fd_jacobian(op, x, dt, w_sprev)
    scale = np.maximum(np.abs(J).max(axis=1, keepdims=True), 1e-300)
    return float(np.max(np.abs(J - F) / scale))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def case_4x4():
    wells = [("inj", "rate", 1e-5, [(0, 0, 0)]), ("prod", "bhp", 1e6, [(3, 3, 0)])]
    return box_case(4, 4, 1, wells, seed=3)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
