"""Newton smoothing with flux elimination.

The fine level eliminates fluxes directly (the flux-flux block is
diagonal there) and solves for ``(dp_r, dp_w, ds)``. Coarse levels use
algebraic hybridization: every face flux is split into two one-sided fluxes
tied by a face-pressure multiplier, every perforation flux into a well-side
and a cell-side part with weights ``alpha`` and ``1 - alpha``. The one-sided
fluxes plus the pressure of their cell (or well) form small invertible
blocks, so they are eliminated locally, leaving a system in
``(multipliers, ds)``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from wellfas.assembly import LevelOperator
from wellfas.linsolve import BlockSystem, LinearSolver


class SmoothingError(RuntimeError):
    pass


@dataclass
class ReducedSystem:
    system: BlockSystem
    back_substitute: Callable[[np.ndarray], np.ndarray]


def reduce_fine_jacobian(J: sp.csr_matrix, layout, r: np.ndarray) -> ReducedSystem:
    """Schur complement of a Jacobian with diagonal flux-flux block onto ``(p_r, p_w, s)``."""
    J = sp.csr_matrix(J)
    nsig = layout.n_faces + layout.n_perfs
    o_s = layout.offsets[4]
    sig = slice(0, nsig)
    pi = slice(nsig, o_s)
    ss = slice(o_s, layout.size)
    A_ff = J[sig, sig]
    if A_ff.nnz and (A_ff - sp.diags(A_ff.diagonal())).count_nonzero():
        raise SmoothingError("flux-flux block is not diagonal")
    d = A_ff.diagonal()
    if np.any(d == 0):
        raise SmoothingError("zero flux resistance")
    Dinv = sp.diags(1.0 / d)
    A_fp, A_fs = J[sig, pi], J[sig, ss]
    A_pf, A_sf = J[pi, sig], J[ss, sig]
    S = sp.bmat([
        [J[pi, pi] - A_pf @ Dinv @ A_fp, J[pi, ss] - A_pf @ Dinv @ A_fs],
        [J[ss, pi] - A_sf @ Dinv @ A_fp, J[ss, ss] - A_sf @ Dinv @ A_fs],
    ], format="csr")
    r_f = r[sig]
    rhs = np.concatenate([-r[pi] + A_pf @ (r_f / d), -r[ss] + A_sf @ (r_f / d)])
    n_pi = o_s - nsig

    def back(y):
        dpi, ds = y[:n_pi], y[n_pi:]
        dsig = (-r_f - A_fp @ dpi - A_fs @ ds) / d
        return np.concatenate([dsig, dpi, ds])

    return ReducedSystem(BlockSystem(S, rhs, n_pi), back)


@dataclass
class HybridStructure:
    """Index maps of the hybridized unknowns for one level, plus the local block layout."""

    u_tail: np.ndarray
    u_head: np.ndarray
    u_pcell: np.ndarray
    u_pwell: np.ndarray
    u_p: np.ndarray
    u_pw: np.ndarray
    entity: np.ndarray
    n_u: int
    starts: np.ndarray = None
    sizes: np.ndarray = None
    blk: np.ndarray = None
    local: np.ndarray = None
    A_umu: sp.csr_matrix = None
    A_muu: sp.csr_matrix = None


# structures depend only on the (immutable) operator topology
_STRUCTURES: "weakref.WeakKeyDictionary[LevelOperator, HybridStructure]" = weakref.WeakKeyDictionary()


def hybrid_structure(op: LevelOperator) -> HybridStructure:
    """Order one-sided fluxes then the pressure of each cell, followed by each well."""
    hs = _STRUCTURES.get(op)
    if hs is not None:
        return hs
    lay = op.layout
    nc, nw, nf, npf = lay.n_cells, lay.n_wells, lay.n_faces, lay.n_perfs
    ent = np.concatenate([op.face_tail, op.face_head, op.perf_cell, nc + op.perf_well, np.arange(nc), nc + np.arange(nw)])
    last = np.concatenate([np.zeros(2 * nf + 2 * npf, np.int64), np.ones(nc + nw, np.int64)])
    order = np.lexsort((np.arange(len(ent)), last, ent))
    u = np.empty(len(ent), dtype=np.int64)
    u[order] = np.arange(len(ent))
    o = np.cumsum([0, nf, nf, npf, npf, nc, nw])
    n = len(ent)
    entity = ent[order]
    starts = np.flatnonzero(np.r_[True, entity[1:] != entity[:-1]])
    sizes = np.diff(np.r_[starts, n])
    blk = np.repeat(np.arange(len(starts)), sizes)
    hs = HybridStructure(
        u_tail=u[o[0]:o[1]], u_head=u[o[1]:o[2]], u_pcell=u[o[2]:o[3]], u_pwell=u[o[3]:o[4]],
        u_p=u[o[4]:o[5]], u_pw=u[o[5]:o[6]], entity=entity, n_u=n,
        starts=starts, sizes=sizes, blk=blk, local=np.arange(n) - starts[blk],
    )
    fn, pn = op.face_n, op.perf_n
    n_mu = nf + npf
    mu_f, mu_p = np.arange(nf), nf + np.arange(npf)
    # multiplier coupling of the one-sided equations
    hs.A_umu = sp.csr_matrix((
        np.concatenate([fn, -fn, pn, -pn]),
        (np.concatenate([hs.u_tail, hs.u_head, hs.u_pcell, hs.u_pwell]), np.concatenate([mu_f, mu_f, mu_p, mu_p]))),
        shape=(n, n_mu))
    # continuity of one-sided fluxes, scaled by the multiplicity to mirror A_umu
    hs.A_muu = sp.csr_matrix((
        np.concatenate([fn, -fn, pn, -pn]),
        (np.concatenate([mu_f, mu_f, mu_p, mu_p]), np.concatenate([hs.u_tail, hs.u_head, hs.u_pwell, hs.u_pcell]))),
        shape=(n_mu, n))
    _STRUCTURES[op] = hs
    return hs


def _block_inverse(rows, cols, vals, hs: HybridStructure) -> sp.csr_matrix:
    """Inverse of the block-diagonal local matrix given in triplet form."""
    n = hs.n_u
    starts, sizes, blk, local = hs.starts, hs.sizes, hs.blk, hs.local
    if np.any(blk[rows] != blk[cols]):
        raise SmoothingError("local hybrid blocks are coupled")
    out_r, out_c, out_v = [], [], []
    for m in np.unique(sizes):
        ids = np.flatnonzero(sizes == m)
        pos = np.full(len(starts), -1)
        pos[ids] = np.arange(len(ids))
        dense = np.zeros((len(ids), m, m))
        sel = sizes[blk[rows]] == m
        np.add.at(dense, (pos[blk[rows[sel]]], local[rows[sel]], local[cols[sel]]), vals[sel])
        try:
            inv = np.linalg.inv(dense)
        except np.linalg.LinAlgError as exc:
            raise SmoothingError("singular local hybrid block") from exc
        if not np.all(np.isfinite(inv)):
            raise SmoothingError("singular local hybrid block")
        base = starts[ids][:, None, None]
        ii = np.broadcast_to(base + np.arange(m)[None, :, None], inv.shape)
        jj = np.broadcast_to(base + np.arange(m)[None, None, :], inv.shape)
        out_r.append(ii.ravel())
        out_c.append(jj.ravel())
        out_v.append(inv.ravel())
    return sp.csr_matrix((np.concatenate(out_v), (np.concatenate(out_r), np.concatenate(out_c))), shape=(n, n))


@dataclass
class HybridSystem(ReducedSystem):
    continuity_error: Callable[[np.ndarray], float] = None


def hybridize_coarse_jacobian(op: LevelOperator, x, dt, r, alpha: float = 0.5) -> HybridSystem:
    """Hybridized Newton system of a level, reduced to ``(face/perforation multipliers, ds)``.

    ``r`` is the residual the Newton step should cancel (including any
    right-hand side). The back-substitution returns the update of the
    original unknowns; one-sided fluxes are reported on the cell side.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lay = op.layout
    nc, nf, npf = lay.n_cells, lay.n_faces, lay.n_perfs
    b = lay.split(x)
    rb = lay.split(r)
    hs = hybrid_structure(op)
    t, h, k, w = op.face_tail, op.face_head, op.perf_cell, op.perf_well
    fn, pn = op.face_n, op.perf_n
    lam, dlam = op.fluid.total_mobility(b.s)
    inv, dinv = 1.0 / lam, -dlam / lam**2
    m_t, m_h = op.face_a * inv[t], op.face_b * inv[h]
    m_k = op.perf_c * inv[k]
    f, _, up, fperf, dfperf = op._upwind(b)
    _, df = op.fluid.fractional_flow(b.s)
    rate = op.well_rate[w]
    bhp = np.flatnonzero(~op.well_rate)

    # local blocks: one-sided flux equations and conservation/control rows
    K = _block_inverse(
        np.concatenate([hs.u_tail, hs.u_tail, hs.u_head, hs.u_head, hs.u_pcell, hs.u_pcell, hs.u_pwell, hs.u_pwell,
                        hs.u_p[t], hs.u_p[h], hs.u_p[k], hs.u_pw[w[rate]], hs.u_pw[bhp]]),
        np.concatenate([hs.u_tail, hs.u_p[t], hs.u_head, hs.u_p[h], hs.u_pcell, hs.u_p[k], hs.u_pwell, hs.u_pw[w],
                        hs.u_tail, hs.u_head, hs.u_pcell, hs.u_pwell[rate], hs.u_pw[bhp]]),
        np.concatenate([m_t, -fn, m_h, fn, (1 - alpha) * m_k, -pn, alpha * m_k, pn,
                        fn, -fn, pn, -pn[rate], np.ones(len(bhp))]),
        hs)
    n_mu = nf + npf
    sr, sw = b.sigma_r, b.sigma_w
    A_us = sp.csr_matrix((
        np.concatenate([sr * op.face_a * dinv[t], sr * op.face_b * dinv[h], (1 - alpha) * sw * op.perf_c * dinv[k], alpha * sw * op.perf_c * dinv[k]]),
        (np.concatenate([hs.u_tail, hs.u_head, hs.u_pcell, hs.u_pwell]), np.concatenate([t, h, k, k]))),
        shape=(hs.n_u, nc))
    A_su = sp.csr_matrix((
        np.concatenate([fn * f[up], -fn * f[up], pn * fperf]),
        (np.concatenate([t, h, k]), np.concatenate([hs.u_tail, hs.u_head, hs.u_pcell]))),
        shape=(nc, hs.n_u))
    wup = fn * sr * df[up]
    cells = np.arange(nc)
    A_ss = sp.csr_matrix((
        np.concatenate([op.pore_volume / dt, wup, -wup, pn * sw * dfperf]),
        (np.concatenate([cells, t, h, k]), np.concatenate([cells, up, up, k]))),
        shape=(nc, nc))

    # split each flux residual between its two one-sided equations
    wt = m_t / (m_t + m_h)
    r_u = np.zeros(hs.n_u)
    r_u[hs.u_tail] = wt * rb.sigma_r
    r_u[hs.u_head] = (1 - wt) * rb.sigma_r
    r_u[hs.u_pcell] = (1 - alpha) * rb.sigma_w
    r_u[hs.u_pwell] = alpha * rb.sigma_w
    r_u[hs.u_p] = rb.p_r
    r_u[hs.u_pw] = rb.p_w

    A_muu = hs.A_muu
    K_umu, K_us, K_r = K @ hs.A_umu, K @ A_us, K @ r_u
    S = sp.bmat([
        [-(A_muu @ K_umu), -(A_muu @ K_us)],
        [-(A_su @ K_umu), A_ss - A_su @ K_us],
    ], format="csr")
    rhs = np.concatenate([A_muu @ K_r, -rb.s + A_su @ K_r])

    def local_update(y):
        dmu, ds = y[:n_mu], y[n_mu:]
        return -K_r - K_umu @ dmu - K_us @ ds

    def back(y):
        du = local_update(y)
        return lay.join(du[hs.u_tail], du[hs.u_pcell], du[hs.u_p], du[hs.u_pw], y[n_mu:])

    def continuity(y):
        du = local_update(y)
        gaps = np.concatenate([du[hs.u_tail] - du[hs.u_head], du[hs.u_pwell] - du[hs.u_pcell]])
        scale = max(np.max(np.abs(du[np.concatenate([hs.u_tail, hs.u_pcell])]), initial=0.0), 1e-300)
        return float(np.max(np.abs(gaps), initial=0.0) / scale)

    return HybridSystem(BlockSystem(S, rhs, n_mu), back, continuity)


@dataclass
class NewtonStats:
    steps: int = 0
    linear_iterations: int = 0


def newton_update(op: LevelOperator, x, dt, w_sprev, b, solver: LinearSolver, method: str = "primal", alpha: float = 0.5,
                  stats: NewtonStats | None = None, defect=None):
    """One Newton correction for ``r(x) - b = 0`` using the chosen flux elimination.

    ``defect`` may supply ``r(x) - b`` when the caller already has it.
    """
    r = op.residual(x, dt, w_sprev) - b if defect is None else defect
    if method == "primal":
        red = reduce_fine_jacobian(op.jacobian(x, dt), op.layout, r)
    elif method == "hybrid":
        red = hybridize_coarse_jacobian(op, x, dt, r, alpha)
    else:
        raise ValueError(f"unknown reduction {method!r}")
    y, its = solver.solve(red.system)
    if stats is not None:
        stats.steps += 1
        stats.linear_iterations += its
    return red.back_substitute(y)


def newton_smooth(op: LevelOperator, x, b, dt, w_sprev, n_steps: int, solver: LinearSolver, method: str = "primal",
                  alpha: float = 0.5, chop: bool = False, stop: Callable[[np.ndarray], bool] | None = None,
                  stats: NewtonStats | None = None, defect_fn: Callable[[np.ndarray], np.ndarray] | None = None):
    """Up to ``n_steps`` plain Newton updates; ``chop`` clamps saturations after each update.

    ``stop(x)`` ends the smoothing early; ``defect_fn(x)`` replaces the
    residual evaluation (lets callers share a cache with ``stop``).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    s = op.layout.s
    x = np.array(x, dtype=float)
    for _ in range(n_steps):
        if stop is not None and stop(x):
            break
        d = defect_fn(x) if defect_fn is not None else None
        x = x + newton_update(op, x, dt, w_sprev, b, solver, method, alpha, stats, d)
        if chop:
            np.clip(x[s], 0.0, 1.0, out=x[s])
        if not np.all(np.isfinite(x)):
            raise SmoothingError("non-finite Newton iterate")
    return x
