"""Block residual and Jacobian of the discrete flow/transport system.

Every level of the multigrid hierarchy shares the same algebraic form, so a
single :class:`LevelOperator` evaluates residuals and Jacobians on all of
them. On the fine level each face/perforation stands for one connection; on
coarse levels a face stands for a bundle of fine faces, which shows up only
through the summed resistances and the multiplicity ``n``:

    face:        (a/lam(s_t) + b/lam(s_h)) sigma - n (p_t - p_h)
    perforation: (c/lam(s_k)) sigma_w - n (p_k - p_w)
    cell:        sum_faces +/- n sigma + sum_perfs n sigma_w
    well:        BHP  p_w - target,  RATE  -sum n sigma_w - target
    transport:   (W s - W s_prev)/dt + upwinded n sigma f_w
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from wellfas.fluid import FluidModel


class Blocks(NamedTuple):
    sigma_r: np.ndarray
    sigma_w: np.ndarray
    p_r: np.ndarray
    p_w: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class Layout:
    """Block offsets of the state vector ``(sigma_r, sigma_w, p_r, p_w, s)``."""

    n_faces: int
    n_perfs: int
    n_cells: int
    n_wells: int

    @property
    def sizes(self):
        return (self.n_faces, self.n_perfs, self.n_cells, self.n_wells, self.n_cells)

    @property
    def offsets(self):
        return tuple(np.concatenate([[0], np.cumsum(self.sizes)]).tolist())

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def block(self, i: int) -> slice:
        o = self.offsets
        return slice(o[i], o[i + 1])

    @property
    def sr(self):
        return self.block(0)

    @property
    def sw(self):
        return self.block(1)

    @property
    def pr(self):
        return self.block(2)

    @property
    def pw(self):
        return self.block(3)

    @property
    def s(self):
        return self.block(4)

    def split(self, x) -> Blocks:
        return Blocks(*(x[self.block(i)] for i in range(5)))

    def join(self, sigma_r, sigma_w, p_r, p_w, s) -> np.ndarray:
        x = np.concatenate([np.broadcast_to(np.asarray(v, float), (n,)) for v, n in zip((sigma_r, sigma_w, p_r, p_w, s), self.sizes)])
        return x.astype(float)


@dataclass(frozen=True, eq=False)
class LevelOperator:
    fluid: FluidModel
    face_tail: np.ndarray
    face_head: np.ndarray
    face_a: np.ndarray
    face_b: np.ndarray
    face_n: np.ndarray
    perf_cell: np.ndarray
    perf_well: np.ndarray
    perf_c: np.ndarray
    perf_n: np.ndarray
    well_rate: np.ndarray
    well_target: np.ndarray
    pore_volume: np.ndarray
    cell_volume: np.ndarray

    @property
    def layout(self) -> Layout:
        return Layout(len(self.face_tail), len(self.perf_cell), len(self.pore_volume), len(self.well_rate))

    @property
    def n_cells(self) -> int:
        return len(self.pore_volume)

    def _upwind(self, b: Blocks):
        f, df = self.fluid.fractional_flow(b.s)
        up = np.where(b.sigma_r > 0, self.face_tail, self.face_head)
        from_cell = (b.sigma_w > 0) | ~self.well_rate[self.perf_well]
        fperf = np.where(from_cell, f[self.perf_cell], 1.0)
        dfperf = np.where(from_cell, df[self.perf_cell], 0.0)
        return f, df, up, fperf, dfperf

    def flux_coefficients(self, s):
        """Diagonal of the flux-flux block and its derivatives w.r.t. the adjacent saturations."""
        lam, dlam = self.fluid.total_mobility(s)
        inv, dinv = 1.0 / lam, -dlam / lam**2
        t, h, k = self.face_tail, self.face_head, self.perf_cell
        m_face = self.face_a * inv[t] + self.face_b * inv[h]
        m_perf = self.perf_c * inv[k]
        return m_face, m_perf, self.face_a * dinv[t], self.face_b * dinv[h], self.perf_c * dinv[k]

    def residual(self, x, dt, w_sprev) -> np.ndarray:
        """Block residual; ``w_sprev`` is the pore-volume-weighted previous saturation."""
        lay = self.layout
        b = lay.split(x)
        t, h, k, w = self.face_tail, self.face_head, self.perf_cell, self.perf_well
        nc = lay.n_cells
        m_face, m_perf, *_ = self.flux_coefficients(b.s)

        r_sr = m_face * b.sigma_r - self.face_n * (b.p_r[t] - b.p_r[h])
        r_sw = m_perf * b.sigma_w - self.perf_n * (b.p_r[k] - b.p_w[w])
        nsr = self.face_n * b.sigma_r
        nsw = self.perf_n * b.sigma_w
        r_pr = np.bincount(t, nsr, nc) - np.bincount(h, nsr, nc) + np.bincount(k, nsw, nc)
        net = np.bincount(w, nsw, lay.n_wells)
        r_pw = np.where(self.well_rate, -net - self.well_target, b.p_w - self.well_target)

        f, _, up, fperf, _ = self._upwind(b)
        wflux = nsr * f[up]
        r_s = (self.pore_volume * b.s - w_sprev) / dt
        r_s += np.bincount(t, wflux, nc) - np.bincount(h, wflux, nc) + np.bincount(k, nsw * fperf, nc)
        return np.concatenate([r_sr, r_sw, r_pr, r_pw, r_s])

    def jacobian(self, x, dt) -> sp.csr_matrix:
        """Analytic Jacobian; the upwind direction is frozen at the current fluxes."""
        lay = self.layout
        o_sr, o_sw, o_pr, o_pw, o_s, n = lay.offsets
        b = lay.split(x)
        t, h, k, w = self.face_tail, self.face_head, self.perf_cell, self.perf_well
        nf, npf, nc = lay.n_faces, lay.n_perfs, lay.n_cells
        fe, pe = np.arange(nf), np.arange(npf)
        fn, pn = self.face_n, self.perf_n
        m_face, m_perf, dm_t, dm_h, dm_k = self.flux_coefficients(b.s)
        _, df, up, fperf, dfperf = self._upwind(b)
        f, _ = self.fluid.fractional_flow(b.s)
        rate_perf = self.well_rate[w]
        bhp = np.flatnonzero(~self.well_rate)
        cells = np.arange(nc)

        rows = [
            o_sr + fe, o_sr + fe, o_sr + fe, o_sr + fe, o_sr + fe,
            o_sw + pe, o_sw + pe, o_sw + pe, o_sw + pe,
            o_pr + t, o_pr + h, o_pr + k,
            o_pw + w[rate_perf], o_pw + bhp,
            o_s + t, o_s + h, o_s + k, o_s + cells, o_s + t, o_s + h, o_s + k,
        ]
        cols = [
            o_sr + fe, o_pr + t, o_pr + h, o_s + t, o_s + h,
            o_sw + pe, o_pr + k, o_pw + w, o_s + k,
            o_sr + fe, o_sr + fe, o_sw + pe,
            o_sw + pe[rate_perf], o_pw + bhp,
            o_sr + fe, o_sr + fe, o_sw + pe, o_s + cells, o_s + up, o_s + up, o_s + k,
        ]
        wup = fn * b.sigma_r * df[up]
        vals = [
            m_face, -fn, fn, b.sigma_r * dm_t, b.sigma_r * dm_h,
            m_perf, -pn, pn, b.sigma_w * dm_k,
            fn, -fn, pn,
            -pn[rate_perf], np.ones(len(bhp)),
            fn * f[up], -fn * f[up], pn * fperf, self.pore_volume / dt, wup, -wup, pn * b.sigma_w * dfperf,
        ]
        jac = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return jac.tocsr()

    def row_scales(self, x, dt, q_ref: float, p_ref: float) -> np.ndarray:
        """Per-row weights turning every residual row into a dimensionless quantity.

        Flux rows are divided by their diagonal (giving a flux) and by the
        reference rate; conservation and rate rows by the reference rate; BHP
        rows by the reference pressure; transport rows by ``W/dt`` (saturation).
        """
        lay = self.layout
        m_face, m_perf, *_ = self.flux_coefficients(lay.split(x).s)
        well = np.where(self.well_rate, 1.0 / q_ref, 1.0 / p_ref)
        return np.concatenate([
            1.0 / (m_face * q_ref),
            1.0 / (m_perf * q_ref),
            np.full(lay.n_cells, 1.0 / q_ref),
            well,
            dt / self.pore_volume,
        ])

    def cfl(self, x, dt) -> float:
        """Largest cell CFL number: outgoing throughput times max ``f_w'`` over pore volume."""
        b = self.layout.split(x)
        nc = self.n_cells
        qr = self.face_n * b.sigma_r
        out = np.zeros(nc)
        out += np.bincount(self.face_tail, np.maximum(qr, 0.0), nc) + np.bincount(self.face_head, np.maximum(-qr, 0.0), nc)
        out += np.bincount(self.perf_cell, np.maximum(self.perf_n * b.sigma_w, 0.0), nc)
        if nc == 0:
            return 0.0
        return float(np.max(dt * out * self.fluid.max_fractional_flow_derivative() / self.pore_volume))


def build_fine_operator(mesh, wells, fluid: FluidModel) -> LevelOperator:
    wells.validate(mesh.n_cells)
    return LevelOperator(
        fluid=fluid,
        face_tail=mesh.face_cells[:, 0].copy(),
        face_head=mesh.face_cells[:, 1].copy(),
        face_a=1.0 / mesh.trans[:, 0],
        face_b=1.0 / mesh.trans[:, 1],
        face_n=np.ones(mesh.n_faces),
        perf_cell=wells.perf_cell.copy(),
        perf_well=wells.perf_well.copy(),
        perf_c=1.0 / wells.perf_wi,
        perf_n=np.ones(wells.n_perfs),
        well_rate=wells.is_rate,
        well_target=wells.targets,
        pore_volume=mesh.pore_volume.astype(float),
        cell_volume=np.asarray(mesh.volume, float).copy(),
    )


def assemble_residual(op: LevelOperator, x, dt, s_prev) -> np.ndarray:
    if dt <= 0:
        raise ValueError("time step must be positive")
    return op.residual(x, dt, op.pore_volume * np.asarray(s_prev, float))


def assemble_jacobian(op: LevelOperator, x, dt) -> sp.csr_matrix:
    if dt <= 0:
        raise ValueError("time step must be positive")
    return op.jacobian(x, dt)


def cfl_number(op: LevelOperator, x, dt) -> float:
    return op.cfl(x, dt)


def scaled_norm(r, scales) -> float:
    return float(np.linalg.norm(r * scales))
