"""Multilevel k-way graph partitioning and well-aware aggregation.

The partitioner follows the usual multilevel recipe: heavy-edge matching
to coarsen, greedy graph growing on the coarsest graph, and greedy boundary
refinement on the way back up. Edges far heavier than the typical edge are
contracted before anything else, so they are never cut.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from wellfas.grid import ConnectivityGraph

HEAVY_RATIO = 1000.0


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray

    @property
    def n_parts(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_parts + 1))
        return [order[bounds[i] : bounds[i + 1]] for i in range(self.n_parts)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_parts)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Consecutive labels ordered by the smallest vertex in each part."""
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return remap[labels]


def _contract(adj: sp.csr_matrix, vw: np.ndarray, cmap: np.ndarray, nc: int):
    p = sp.csr_matrix((np.ones(len(cmap)), (cmap, np.arange(len(cmap)))), shape=(nc, len(cmap)))
    cadj = (p @ adj @ p.T).tocsr()
    cadj.setdiag(0)
    cadj.eliminate_zeros()
    return cadj, np.bincount(cmap, weights=vw, minlength=nc)


def _heavy_contraction(adj: sp.csr_matrix):
    """Map vertices joined by edges above ``HEAVY_RATIO`` x median weight to one vertex."""
    if adj.nnz == 0:
        return np.arange(adj.shape[0])
    thresh = HEAVY_RATIO * np.median(adj.data)
    heavy = adj.copy()
    heavy.data = (heavy.data >= thresh).astype(float)
    heavy.eliminate_zeros()
    _, comp = connected_components(heavy, directed=False)
    return _relabel(comp)


def _match(adj: sp.csr_matrix, vw: np.ndarray, maxvw: float, rng):
    """Heavy-edge matching; returns the coarse map and the number of coarse vertices."""
    n = adj.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for v in rng.permutation(n):
        if match[v] >= 0:
            continue
        best, best_w = v, 0.0
        for jj in range(indptr[v], indptr[v + 1]):
            u = indices[jj]
            if match[u] < 0 and u != v and vw[u] + vw[v] <= maxvw and data[jj] > best_w:
                best, best_w = u, data[jj]
        match[v] = best
        match[best] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    return cmap, nc


def _bfs_far(adj: sp.csr_matrix, sources, n: int) -> np.ndarray:
    dist = np.full(n, np.iinfo(np.int64).max)
    q = deque()
    for s in sources:
        dist[s] = 0
        q.append(s)
    while q:
        v = q.popleft()
        for u in adj.indices[adj.indptr[v] : adj.indptr[v + 1]]:
            if dist[u] > dist[v] + 1:
                dist[u] = dist[v] + 1
                q.append(u)
    return dist


def _grow(adj: sp.csr_matrix, vw: np.ndarray, k: int, rng) -> np.ndarray:
    """Greedy graph growing from k mutually distant seeds."""
    n = adj.shape[0]
    if k >= n:
        return np.arange(n)
    seeds = [int(rng.integers(n))]
    seeds = [int(np.argmax(_bfs_far(adj, seeds, n)))]
    while len(seeds) < k:
        d = _bfs_far(adj, seeds, n).astype(float)
        d[seeds] = -1
        cand = np.flatnonzero(d == d.max())
        seeds.append(int(cand[rng.integers(len(cand))]))
    labels = np.full(n, -1, dtype=np.int64)
    pw = np.zeros(k)
    conn = [dict() for _ in range(k)]
    for p, s in enumerate(seeds):
        labels[s] = p
        pw[p] = vw[s]
    for p, s in enumerate(seeds):
        for jj in range(adj.indptr[s], adj.indptr[s + 1]):
            u = adj.indices[jj]
            if labels[u] < 0:
                conn[p][u] = conn[p].get(u, 0.0) + adj.data[jj]
    remaining = n - k
    while remaining:
        order = np.argsort(pw, kind="stable")
        for p in order:
            cand = {u: c for u, c in conn[p].items() if labels[u] < 0}
            conn[p] = cand
            if cand:
                break
        else:
            # disconnected leftovers: start a new region in the lightest part
            u = int(np.flatnonzero(labels < 0)[0])
            p = int(order[0])
            cand = {u: 0.0}
        u = max(cand, key=lambda key: (cand[key], -key))
        labels[u] = p
        pw[p] += vw[u]
        remaining -= 1
        for jj in range(adj.indptr[u], adj.indptr[u + 1]):
            z = adj.indices[jj]
            if labels[z] < 0:
                conn[p][z] = conn[p].get(z, 0.0) + adj.data[jj]
    return labels


def _refine(adj: sp.csr_matrix, vw: np.ndarray, labels: np.ndarray, k: int, maxw: float, rng, passes: int = 6):
    pw = np.bincount(labels, weights=vw, minlength=k)
    count = np.bincount(labels, minlength=k)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for _ in range(passes):
        moved = 0
        for v in rng.permutation(adj.shape[0]):
            own = labels[v]
            conn = {}
            for jj in range(indptr[v], indptr[v + 1]):
                q = labels[indices[jj]]
                conn[q] = conn.get(q, 0.0) + data[jj]
            if len(conn) == 1 and own in conn or not conn or count[own] == 1:
                continue
            base = conn.get(own, 0.0)
            best, best_gain = -1, 0.0
            for q, c in conn.items():
                if q == own:
                    continue
                gain = c - base
                fits = pw[q] + vw[v] <= maxw
                better_balance = pw[own] > pw[q] + vw[v]
                if (gain > best_gain and fits) or (gain == 0 and best < 0 and better_balance):
                    best, best_gain = q, gain
            if best >= 0:
                labels[v] = best
                pw[own] -= vw[v]
                pw[best] += vw[v]
                count[own] -= 1
                count[best] += 1
                moved += 1
        if not moved:
            break
    return labels


def _make_connected(adj: sp.csr_matrix, labels: np.ndarray, vw: np.ndarray) -> np.ndarray:
    """Reassign every non-principal piece of a part to its most strongly connected neighbour part."""
    labels = labels.copy()
    while True:
        rows, cols = adj.nonzero()
        same = labels[rows] == labels[cols]
        inner = sp.csr_matrix((np.ones(same.sum()), (rows[same], cols[same])), shape=adj.shape)
        ncomp, comp = connected_components(inner, directed=False)
        cw = np.bincount(comp, weights=vw, minlength=ncomp)
        owner = np.zeros(ncomp, dtype=np.int64)
        owner[comp] = labels
        best = {}
        for c in range(ncomp):
            p = owner[c]
            if p not in best or cw[c] > cw[best[p]] or (cw[c] == cw[best[p]] and c < best[p]):
                best[p] = c
        stray = [c for c in range(ncomp) if best[owner[c]] != c]
        if not stray:
            return labels
        for c in stray:
            verts = np.flatnonzero(comp == c)
            sub = adj[verts]
            nb_lab = labels[sub.indices]
            mask = nb_lab != owner[c]
            if not mask.any():
                continue
            votes = np.bincount(nb_lab[mask], weights=sub.data[mask])
            labels[verts] = int(np.argmax(votes))
        # repeat: a reassigned piece may itself sit in a part that had been split


def _kway_connected(adj, vw, k, rng, imbalance):
    n = adj.shape[0]
    if k == 1 or n == 1:
        return np.zeros(n, dtype=np.int64)
    total = vw.sum()
    maxw = (1.0 + imbalance) * total / k

    # stage 0: contract dominant edges
    hmap = _heavy_contraction(adj)
    nh = hmap.max() + 1
    hadj, hvw = _contract(adj, vw, hmap, nh)
    k_eff = min(k, nh)

    graphs = [(hadj, hvw)]
    maps = []
    coarsen_to = max(8 * k_eff, 32)
    while graphs[-1][0].shape[0] > coarsen_to:
        a, w = graphs[-1]
        cmap, nc = _match(a, w, 1.5 * total / k_eff, rng)
        if nc > 0.9 * a.shape[0]:
            break
        maps.append(cmap)
        graphs.append(_contract(a, w, cmap, nc))

    a, w = graphs[-1]
    labels = _grow(a, w, k_eff, rng)
    labels = _refine(a, w, labels, k_eff, maxw, rng)
    for lvl in range(len(maps) - 1, -1, -1):
        labels = labels[maps[lvl]]
        a, w = graphs[lvl]
        labels = _refine(a, w, labels, k_eff, maxw, rng)
    labels = _make_connected(adj, labels[hmap], vw)
    return _absorb_small(adj, labels, vw, 0.25 * total / k)


def _absorb_small(adj: sp.csr_matrix, labels: np.ndarray, vw: np.ndarray, minw: float) -> np.ndarray:
    """Merge parts lighter than ``minw`` into their most strongly connected neighbour."""
    labels = labels.copy()
    while True:
        pw = np.bincount(labels, weights=vw)
        small = [p for p in np.argsort(pw, kind="stable") if 0 < pw[p] < minw]
        if not small:
            return labels
        p = small[0]
        verts = np.flatnonzero(labels == p)
        sub = adj[verts]
        nb = labels[sub.indices]
        mask = nb != p
        if not mask.any():
            return labels
        labels[verts] = int(np.argmax(np.bincount(nb[mask], weights=sub.data[mask])))


def kway_partition(graph: ConnectivityGraph, k: int, seed: int = 0, imbalance: float = 0.2) -> Partition:
    """Partition into at most ``k`` non-empty connected parts, deterministic per seed."""
    n = graph.n_vertices
    if k < 1:
        raise PartitionError("k must be >= 1")
    if k > n:
        raise PartitionError(f"cannot split {n} vertices into {k} parts")
    rng = np.random.default_rng(seed)
    adj = graph.adjacency().astype(float)
    vw = graph.vertex_weights.astype(float)
    ncomp, comp = connected_components(adj, directed=False)
    if ncomp > k:
        raise PartitionError(f"graph has {ncomp} components, more than k = {k}")
    labels = np.zeros(n, dtype=np.int64)
    if ncomp == 1:
        labels = _kway_connected(adj, vw, k, rng, imbalance)
    else:
        cw = np.bincount(comp, weights=vw)
        share = np.maximum(1, np.floor(k * cw / cw.sum()).astype(int))
        while share.sum() > k:
            share[np.argmax(share)] -= 1
        offset = 0
        for c in range(ncomp):
            verts = np.flatnonzero(comp == c)
            sub = adj[verts][:, verts].tocsr()
            kc = min(int(share[c]), len(verts))
            labels[verts] = offset + _kway_connected(sub, vw[verts], kc, rng, imbalance)
            offset = labels[verts].max() + 1
    return Partition(_relabel(labels))


def near_well_mask(adj: sp.csr_matrix, well_cells, n_lay: int) -> np.ndarray:
    """Cells within ``n_lay`` graph layers of any well cell."""
    n = adj.shape[0]
    near = np.zeros(n, dtype=bool)
    for cells in well_cells:
        near[np.asarray(cells, dtype=np.int64)] = True
    pattern = adj.copy()
    pattern.data = np.ones_like(pattern.data)
    for _ in range(n_lay):
        near = near | (pattern @ near.astype(float) > 0)
    return near


def well_aware_partition(conn: ConnectivityGraph, well_cells, n_lay: int = 4, scale: float = 1e6, k: int = 2, seed: int = 0) -> Partition:
    """Partition with heavier edges around wells, then merge all parts touching each well.

    After the merge every perforated cell and all of its graph neighbours
    belong to one part.
    """
    if n_lay < 0 or scale < 1:
        raise PartitionError("need n_lay >= 0 and scale >= 1")
    adj = conn.adjacency()
    weights = conn.weights.copy()
    if n_lay > 0 and scale != 1 and len(well_cells):
        near = near_well_mask(adj, well_cells, n_lay)
        both = near[conn.edges[:, 0]] & near[conn.edges[:, 1]]
        weights[both] = weights[both] * int(round(scale))
    graph = ConnectivityGraph(conn.n_vertices, conn.edges, weights, conn.vertex_weights)
    part0 = kway_partition(graph, k, seed)
    labels = part0.labels.copy()
    if not len(well_cells):
        return part0

    parent = np.arange(part0.n_parts)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for cells in well_cells:
        cells = np.asarray(cells, dtype=np.int64)
        touched = set(labels[cells].tolist())
        for c in cells:
            touched.update(labels[adj.indices[adj.indptr[c] : adj.indptr[c + 1]]].tolist())
        touched = sorted(touched)
        root = find(touched[0])
        for p in touched[1:]:
            r = find(p)
            if r != root:
                parent[max(r, root)] = min(r, root)
                root = min(r, root)
    roots = np.array([find(p) for p in range(part0.n_parts)])
    return Partition(_relabel(roots[labels]))


def well_links(well_cells) -> np.ndarray:
    """Edges chaining the perforated cells of each well (the wellbore connects them)."""
    pairs = [np.stack([c[:-1], c[1:]], axis=1) for c in (np.asarray(w, dtype=np.int64) for w in well_cells) if len(c) > 1]
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)


def is_connected_partition(graph: ConnectivityGraph, part: Partition, well_cells=()) -> bool:
    """Every part is connected in the cell graph plus the wellbore links of ``well_cells``."""
    adj = graph.adjacency()
    links = well_links(well_cells)
    if len(links):
        n = graph.n_vertices
        extra = sp.coo_matrix((np.ones(2 * len(links)), (np.r_[links[:, 0], links[:, 1]], np.r_[links[:, 1], links[:, 0]])),
                              shape=(n, n))
        adj = (adj + extra).tocsr()
    for members in part.members:
        sub = adj[members][:, members]
        if connected_components(sub, directed=False)[0] != 1:
            return False
    return True
