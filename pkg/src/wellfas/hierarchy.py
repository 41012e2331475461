"""Aggregation hierarchy and lowest-order intergrid operators.

Coarse cells are aggregates of cells on the next finer level; wells stay
singletons on every level. Coarse fluxes are bundle fluxes: one coarse face
dof per pair of adjacent aggregates, interpolated with the orientation sign
of each constituent face. Interpolation is piecewise constant for pressures
and saturations, so the Galerkin operator ``R r(P x)`` has the same algebraic
form as the fine residual and is stored as a :class:`LevelOperator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from wellfas.assembly import LevelOperator, build_fine_operator
from wellfas.grid import ConnectivityGraph
from wellfas.partition import kway_partition, well_aware_partition, well_links

# weights of Q are multiples of 2**-40 so that Q @ P sums to exactly one
_QUANTUM = 2**40


class HierarchyError(ValueError):
    pass


def _exact_weights(groups: np.ndarray, raw: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group normalized weights whose floating-point sums are exactly one."""
    total = np.bincount(groups, weights=raw, minlength=n_groups)
    q = np.round(raw / total[groups] * _QUANTUM).astype(np.int64)
    deficit = _QUANTUM - np.bincount(groups, weights=q, minlength=n_groups).astype(np.int64)
    # put the rounding remainder on the largest entry of each group
    order = np.lexsort((-q, groups))
    first = order[np.searchsorted(groups[order], np.arange(n_groups))]
    q[first] += deficit
    return q.astype(float) / _QUANTUM


def _selector(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.csr_matrix((np.asarray(vals, float), (rows, cols)), shape=shape)


@dataclass(frozen=True, eq=False)
class Transfer:
    """Block intergrid operators between a level (``fine``) and the next coarser one."""

    agg: np.ndarray
    P_blocks: tuple
    Q_blocks: tuple
    P: sp.csr_matrix = field(init=False)
    R: sp.csr_matrix = field(init=False)
    Q: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        P = sp.block_diag(self.P_blocks, format="csr")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", P.T.tocsr())
        object.__setattr__(self, "Q", sp.block_diag(self.Q_blocks, format="csr"))

    def interpolate(self, x):
        return self.P @ x

    def restrict(self, r):
        return self.R @ r

    def project(self, x):
        return self.Q @ x

    def restrict_cells(self, v):
        """Sum a per-cell quantity over each aggregate (saturation block of R)."""
        return self.P_blocks[4].T @ v


def coarsen_operator(op: LevelOperator, labels: np.ndarray) -> tuple[LevelOperator, Transfer]:
    """Galerkin coarse operator and transfer for a given cell aggregation."""
    labels = np.asarray(labels, dtype=np.int64)
    nc_f = op.n_cells
    nc_c = int(labels.max()) + 1
    if np.any(np.bincount(labels, minlength=nc_c) == 0):
        raise HierarchyError("empty aggregate")
    lay = op.layout

    # aggregates must be connected through faces or through a wellbore
    links = np.concatenate([np.stack([op.face_tail, op.face_head], axis=1), well_links(level_well_cells(op))])
    same = labels[links[:, 0]] == labels[links[:, 1]]
    inner = sp.csr_matrix((np.ones(same.sum()), (links[same, 0], links[same, 1])), shape=(nc_f, nc_f))
    if connected_components(inner, directed=False)[0] != nc_c:
        raise HierarchyError("disconnected aggregate")

    # faces: bundles of fine faces between two aggregates, oriented low -> high
    A, B = labels[op.face_tail], labels[op.face_head]
    cross = np.flatnonzero(A != B)
    lo, hi = np.minimum(A[cross], B[cross]), np.maximum(A[cross], B[cross])
    sign = np.where(A[cross] == lo, 1.0, -1.0)
    pairs, face_of = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
    face_of = face_of.reshape(-1)
    nf_c = len(pairs)
    a_f, b_f = op.face_a[cross], op.face_b[cross]
    face_a = np.bincount(face_of, np.where(sign > 0, a_f, b_f), nf_c)
    face_b = np.bincount(face_of, np.where(sign > 0, b_f, a_f), nf_c)
    face_n = np.bincount(face_of, op.face_n[cross], nf_c)
    P_sr = _selector(cross, face_of, sign, (lay.n_faces, nf_c))
    w_sr = _exact_weights(face_of, np.ones(len(cross)), nf_c)
    Q_sr = _selector(face_of, cross, sign * w_sr, (nf_c, lay.n_faces))

    # perforations: bundles per (well, aggregate)
    pc = labels[op.perf_cell]
    if lay.n_perfs:
        keys, perf_of = np.unique(np.stack([op.perf_well, pc], axis=1), axis=0, return_inverse=True)
        perf_of = perf_of.reshape(-1)
    else:
        keys, perf_of = np.zeros((0, 2), np.int64), np.zeros(0, np.int64)
    np_c = len(keys)
    perf_c = np.bincount(perf_of, op.perf_c, np_c)
    perf_n = np.bincount(perf_of, op.perf_n, np_c)
    ip = np.arange(lay.n_perfs)
    P_sw = _selector(ip, perf_of, np.ones(lay.n_perfs), (lay.n_perfs, np_c))
    w_sw = _exact_weights(perf_of, np.ones(lay.n_perfs), np_c) if np_c else np.zeros(0)
    Q_sw = _selector(perf_of, ip, w_sw, (np_c, lay.n_perfs))

    cells = np.arange(nc_f)
    P_cell = _selector(cells, labels, np.ones(nc_f), (nc_f, nc_c))
    Q_p = _selector(labels, cells, _exact_weights(labels, op.cell_volume, nc_c), (nc_c, nc_f))
    Q_s = _selector(labels, cells, _exact_weights(labels, op.pore_volume, nc_c), (nc_c, nc_f))
    eye_w = sp.identity(lay.n_wells, format="csr")

    coarse = LevelOperator(
        fluid=op.fluid,
        face_tail=pairs[:, 0].astype(np.int64),
        face_head=pairs[:, 1].astype(np.int64),
        face_a=face_a,
        face_b=face_b,
        face_n=face_n,
        perf_cell=keys[:, 1].astype(np.int64),
        perf_well=keys[:, 0].astype(np.int64),
        perf_c=perf_c,
        perf_n=perf_n,
        well_rate=op.well_rate,
        well_target=op.well_target,
        pore_volume=np.bincount(labels, op.pore_volume, nc_c),
        cell_volume=np.bincount(labels, op.cell_volume, nc_c),
    )
    transfer = Transfer(labels, (P_sr, P_sw, P_cell, eye_w, P_cell), (Q_sr, Q_sw, Q_p, eye_w, Q_s))
    return coarse, transfer


def level_graph(op: LevelOperator, cell_weights=None) -> ConnectivityGraph:
    """Cell graph of a level: edge weight = number of fine faces in the bundle."""
    w = np.maximum(1, np.round(op.face_n).astype(np.int64))
    return ConnectivityGraph(op.n_cells, np.stack([op.face_tail, op.face_head], axis=1), w, cell_weights)


def level_well_cells(op: LevelOperator) -> list[np.ndarray]:
    nw = len(op.well_rate)
    return [np.unique(op.perf_cell[op.perf_well == w]) for w in range(nw)]


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Operators ``ops[0]`` (fine) ... ``ops[L-1]``; ``transfers[l]`` links ``l`` and ``l+1``."""

    ops: list
    transfers: list

    @property
    def n_levels(self) -> int:
        return len(self.ops)

    def restrict_previous(self, w_sprev0: np.ndarray) -> list[np.ndarray]:
        """Pore-volume-weighted previous saturation on every level."""
        out = [np.asarray(w_sprev0, float)]
        for t in self.transfers:
            out.append(t.restrict_cells(out[-1]))
        return out


def build_hierarchy(
    mesh,
    wells,
    fluid,
    levels: int = 3,
    beta=32,
    seed: int = 0,
    n_lay: int = 4,
    scale: float = 1e6,
    merge_coarse_wells: bool = True,
) -> Hierarchy:
    """Coarsen with the well-aware partition; ``beta`` is a factor or one factor per coarsening."""
    if levels < 1:
        raise HierarchyError("need at least one level")
    betas = list(beta) if np.iterable(beta) else [beta] * (levels - 1)
    if len(betas) < levels - 1 or any(b < 2 for b in betas[: levels - 1]):
        raise HierarchyError("coarsening factors must be >= 2, one per coarsening")
    op = build_fine_operator(mesh, wells, fluid)
    ops, transfers = [op], []
    weights = np.ones(op.n_cells, dtype=np.int64)
    for lvl in range(levels - 1):
        k = max(1, math.ceil(weights.sum() / betas[lvl]) if lvl == 0 else math.ceil(op.n_cells / betas[lvl]))
        k = min(k, op.n_cells)
        graph = level_graph(op, weights)
        wc = level_well_cells(op)
        if lvl == 0:
            part = well_aware_partition(graph, wc, n_lay, scale, k, seed + lvl)
        elif merge_coarse_wells:
            part = well_aware_partition(graph, wc, 0, 1, k, seed + lvl)
        else:
            part = kway_partition(graph, k, seed + lvl)
        op, tr = coarsen_operator(op, part.labels)
        weights = np.bincount(part.labels, weights=weights).astype(np.int64)
        ops.append(op)
        transfers.append(tr)
    return Hierarchy(ops, transfers)
