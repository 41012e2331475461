"""Linear solvers for the reduced (pressure-like, saturation) Newton systems."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolveError(RuntimeError):
    pass


@dataclass
class BlockSystem:
    """Square system whose first ``n_pressure`` unknowns form the pressure-like block."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_pressure: int

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or len(self.rhs) != n or not 0 <= self.n_pressure <= n:
            raise ValueError("inconsistent block system dimensions")


@numba.njit(cache=True)
def _ilu0(indptr, indices, data):
    n = len(indptr) - 1
    vals = data.copy()
    diag = np.full(n, -1, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            if indices[jj] == i:
                diag[i] = jj
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            pos[indices[jj]] = jj
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k >= i:
                continue
            piv = vals[diag[k]]
            vals[kk] = vals[kk] / piv
            lik = vals[kk]
            for jj in range(diag[k] + 1, indptr[k + 1]):
                p = pos[indices[jj]]
                if p >= 0:
                    vals[p] -= lik * vals[jj]
        for jj in range(indptr[i], indptr[i + 1]):
            pos[indices[jj]] = -1
        if vals[diag[i]] == 0.0:
            vals[diag[i]] = 1e-300
    return vals, diag


@numba.njit(cache=True)
def _ilu0_apply(indptr, indices, vals, diag, r):
    n = len(indptr) - 1
    y = r.copy()
    for i in range(n):
        acc = y[i]
        for jj in range(indptr[i], diag[i]):
            acc -= vals[jj] * y[indices[jj]]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for jj in range(diag[i] + 1, indptr[i + 1]):
            acc -= vals[jj] * y[indices[jj]]
        y[i] = acc / vals[diag[i]]
    return y


class ILU0:
    """Zero-fill incomplete LU factorization (same sparsity as the matrix)."""

    def __init__(self, a: sp.csr_matrix):
        a = sp.csr_matrix(a, copy=True)
        n = a.shape[0]
        # every row needs a stored diagonal
        a = (a + sp.diags(np.zeros(n), format="csr")).tocsr()
        a.sort_indices()
        missing = np.flatnonzero(a.diagonal() == 0)
        if len(missing):
            a = (a + sp.csr_matrix((np.full(len(missing), 1e-300), (missing, missing)), shape=a.shape)).tocsr()
            a.sort_indices()
        self._indptr = a.indptr.astype(np.int64)
        self._indices = a.indices.astype(np.int64)
        self._vals, self._diag = _ilu0(self._indptr, self._indices, a.data.astype(float))

    def solve(self, r):
        return _ilu0_apply(self._indptr, self._indices, self._vals, self._diag, np.asarray(r, float))


def _direct(a: sp.spmatrix, symmetric_pattern: bool = False):
    # the pressure block is structurally symmetric: order on A^T + A and prefer
    # diagonal pivots, otherwise row pivoting destroys the ordering
    if symmetric_pattern:
        kw = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    else:
        kw = dict(permc_spec="COLAMD")
    try:
        lu = spla.splu(sp.csc_matrix(a), **kw)
    except RuntimeError as exc:
        raise LinearSolveError(f"direct factorization failed: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
        raise LinearSolveError("singular matrix")
    return lu


@dataclass
class LinearSolver:
    """``kind='cpr'``: restarted GMRES with a two-stage CPR preconditioner;
    ``kind='direct'``: sparse LU. Systems with fewer than ``direct_below``
    unknowns (typically the coarse levels) are always factorized directly.

    Stage one of the preconditioner solves the pressure-like block exactly
    (sparse LU, adequate at desk scale); stage two is an ILU(0) sweep on the
    whole system applied to the stage-one residual.
    """

    kind: str = "cpr"
    rtol: float = 1e-8
    max_iter: int = 200
    restart: int = 30
    direct_below: int = 1000

    def __post_init__(self):
        if self.kind not in ("cpr", "direct"):
            raise ValueError(f"unknown linear solver {self.kind!r}")
        if not 0 < self.rtol < 1:
            raise ValueError("rtol must lie in (0, 1)")

    def solve(self, system: BlockSystem):
        """Return ``(solution, iterations)``; raise :class:`LinearSolveError` on failure."""
        a = sp.csr_matrix(system.matrix)
        a.sum_duplicates()
        b = np.asarray(system.rhs, float)
        if not (np.all(np.isfinite(a.data)) and np.all(np.isfinite(b))):
            raise LinearSolveError("non-finite entries in linear system")
        # row equilibration
        counts = np.diff(a.indptr)
        if np.any(counts == 0):
            raise LinearSolveError("zero row in linear system")
        rmax = np.maximum.reduceat(np.abs(a.data), a.indptr[:-1])
        if np.any(rmax == 0):
            raise LinearSolveError("zero row in linear system")
        a = sp.csr_matrix((a.data / np.repeat(rmax, counts), a.indices, a.indptr), shape=a.shape)
        b = b / rmax
        if not np.any(b):
            return np.zeros_like(b), 0
        if self.kind == "direct" or a.shape[0] < self.direct_below:
            x = _direct(a).solve(b)
            if not np.all(np.isfinite(x)):
                raise LinearSolveError("direct solve produced non-finite values")
            return x, 1
        return self._gmres(a, b, system.n_pressure)

    def _gmres(self, a, b, n_p):
        n = a.shape[0]
        stage1 = _direct(a[:n_p, :n_p], symmetric_pattern=True) if n_p else None
        ilu = ILU0(a)

        def apply(r):
            z = np.zeros(n)
            if stage1 is not None:
                z[:n_p] = stage1.solve(r[:n_p])
                r = r - a @ z
            return z + ilu.solve(r)

        M = spla.LinearOperator((n, n), matvec=apply, dtype=float)
        its = [0]

        def count(_):
            its[0] += 1

        x, info = spla.gmres(a, b, M=M, rtol=self.rtol, atol=0.0, restart=self.restart,
                             maxiter=max(1, self.max_iter // self.restart + 1), callback=count, callback_type="pr_norm")
        res = np.linalg.norm(b - a @ x)
        if info != 0 or not np.isfinite(res) or res > 10 * self.rtol * np.linalg.norm(b):
            raise LinearSolveError(f"GMRES did not converge (info={info}, relative residual {res / np.linalg.norm(b):.2e})")
        return x, its[0]
