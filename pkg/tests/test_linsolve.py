import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from wellfas.linsolve import ILU0, BlockSystem, LinearSolver, LinearSolveError


def laplacian_2d(n, shift=0.0):
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return (sp.kron(t, eye) + sp.kron(eye, t) + shift * sp.identity(n * n)).tocsr()


@pytest.mark.parametrize("kind,below", [("direct", 1000), ("cpr", 0)])
def test_identity(kind, below):
    b = np.arange(1.0, 6.0)
    x, its = LinearSolver(kind, direct_below=below).solve(BlockSystem(sp.identity(5, format="csr"), b, 2))
    np.testing.assert_allclose(x, b)
    assert its == 1


def test_spd_pressure_system_matches_direct():
    a = laplacian_2d(30, shift=1e-2)
    b = np.random.default_rng(0).standard_normal(a.shape[0])
    ref = spla.spsolve(a.tocsc(), b)
    x, its = LinearSolver("cpr", rtol=1e-8, direct_below=0).solve(BlockSystem(a, b, 100))
    assert np.linalg.norm(a @ x - b) <= 1e-8 * np.linalg.norm(b) * 10
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 1e-6
    assert its >= 1


def test_block_system_with_saturation_coupling():
    rng = np.random.default_rng(1)
    app = laplacian_2d(12, shift=0.1)
    n = app.shape[0]
    aps = sp.random(n, n, density=0.02, random_state=1) * 0.1
    asp = sp.random(n, n, density=0.02, random_state=2) * 0.1
    ass = sp.identity(n) * 2.0 + sp.diags(rng.uniform(0, 0.5, n - 1), -1)
    a = sp.bmat([[app, aps], [asp, ass]], format="csr")
    b = rng.standard_normal(2 * n)
    x, _ = LinearSolver("cpr", rtol=1e-10, direct_below=0).solve(BlockSystem(a, b, n))
    np.testing.assert_allclose(x, spla.spsolve(a.tocsc(), b), rtol=1e-7, atol=1e-9)


def test_ilu0_exact_on_tridiagonal():
    a = sp.diags([-1.0, 4.0, -2.0], [-1, 0, 1], shape=(8, 8)).tocsr()
    b = np.arange(8.0)
    np.testing.assert_allclose(a @ ILU0(a).solve(b), b, atol=1e-12)


@pytest.mark.parametrize("kind,below", [("direct", 1000), ("cpr", 0)])
def test_singular_neumann_system_fails(kind, below):
    # pure-Neumann pressure: constant nullspace
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(6, 6)).tolil()
    t[0, 0] = t[5, 5] = 1.0
    b = np.zeros(6)
    b[0], b[5] = 1.0, 2.0
    with pytest.raises(LinearSolveError):
        LinearSolver(kind, direct_below=below, max_iter=30).solve(BlockSystem(t.tocsr(), b, 6))


def test_zero_rhs_and_validation():
    x, its = LinearSolver().solve(BlockSystem(sp.identity(3, format="csr"), np.zeros(3), 1))
    assert its == 0 and not np.any(x)
    with pytest.raises(ValueError):
        BlockSystem(sp.identity(3, format="csr"), np.zeros(2), 1)
    with pytest.raises(ValueError):
        LinearSolver("amg")
    with pytest.raises(LinearSolveError):
        LinearSolver().solve(BlockSystem(sp.csr_matrix((2, 2)), np.ones(2), 1))
