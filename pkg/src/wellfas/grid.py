"""Cell-centred mesh, two-point geometry and connectivity graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


def half_transmissibility(area, normal, perm_diag, x_face, x_cell):
    """One-sided transmissibility ``|e| n.K.(x_e - x_i) / |x_e - x_i|^2`` (vectorized).

    ``normal`` is the outer unit normal of the cell on the face; ``perm_diag``
    holds the diagonal permeability entries of that cell.
    """
    d = np.asarray(x_face, float) - np.asarray(x_cell, float)
    dist2 = np.sum(d * d, axis=-1)
    if np.any(dist2 <= 0.0):
        raise MeshError("face collocation point coincides with the cell barycenter")
    kd = np.asarray(perm_diag, float) * d
    return np.asarray(area, float) * np.sum(np.asarray(normal, float) * kd, axis=-1) / dist2


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected graph with positive integer edge weights.

    ``vertex_weights`` defaults to ones; coarse levels use it to carry the
    number of fine cells represented by each vertex.
    """

    n_vertices: int
    edges: np.ndarray
    weights: np.ndarray
    vertex_weights: np.ndarray | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.int64).reshape(-1)
        if len(weights) != len(edges):
            raise ValueError("one weight per edge required")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if len(edges) and (edges.min() < 0 or edges.max() >= self.n_vertices):
            raise ValueError("edge endpoint out of range")
        if np.any(weights < 1):
            raise ValueError("edge weights must be >= 1")
        key = np.sort(edges, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("duplicate edges")
        vw = self.vertex_weights
        vw = np.ones(self.n_vertices, dtype=np.int64) if vw is None else np.asarray(vw, np.int64)
        object.__setattr__(self, "edges", key)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "vertex_weights", vw)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency matrix."""
        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = sp.coo_matrix(
            (np.concatenate([self.weights, self.weights]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        )
        return a.tocsr()

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency()
        return a.indices[a.indptr[v] : a.indptr[v + 1]]


@dataclass(frozen=True)
class Mesh:
    """Immutable finite-volume mesh.

    Faces are interior only (no-flow boundary) and oriented from the lower to
    the higher cell index. ``trans`` holds the one-sided transmissibilities of
    the first and second cell of each face. Geometry arrays are optional for
    meshes read from a face-list file.
    """

    volume: np.ndarray
    porosity: np.ndarray
    perm: np.ndarray
    centroid: np.ndarray
    face_cells: np.ndarray
    face_area: np.ndarray
    trans: np.ndarray
    face_centroid: np.ndarray | None = None
    face_normal: np.ndarray | None = None
    dims: tuple[int, int, int] | None = None
    spacing: tuple[float, float, float] | None = None
    _adjacency: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        nc = len(self.volume)
        fc = np.asarray(self.face_cells, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "face_cells", fc)
        if len(fc):
            if np.any(fc[:, 0] >= fc[:, 1]):
                raise MeshError("faces must be oriented with K < L")
            if fc.min() < 0 or fc.max() >= nc:
                raise MeshError("face references a nonexistent cell")
            if len(np.unique(fc, axis=0)) != len(fc):
                raise MeshError("duplicate face")
        for name in ("volume", "porosity", "face_area"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise MeshError(f"{name} must be strictly positive")
        if np.any(np.asarray(self.trans) <= 0):
            raise MeshError("one-sided transmissibilities must be strictly positive")
        if np.any(np.asarray(self.perm) <= 0):
            raise MeshError("permeability entries must be positive")
        for name, n in (("porosity", nc), ("perm", nc), ("centroid", nc), ("face_area", len(fc)), ("trans", len(fc))):
            if len(getattr(self, name)) != n:
                raise MeshError(f"{name} has wrong length")

    @property
    def n_cells(self) -> int:
        return len(self.volume)

    @property
    def n_faces(self) -> int:
        return len(self.face_cells)

    @property
    def pore_volume(self) -> np.ndarray:
        return self.porosity * self.volume

    def adjacency(self) -> sp.csr_matrix:
        """Cell-connectivity matrix: entry 1 for every pair of cells sharing a face."""
        if self._adjacency is None:
            g = self.cell_graph()
            object.__setattr__(self, "_adjacency", g.adjacency())
        return self._adjacency

    def cell_graph(self) -> ConnectivityGraph:
        return ConnectivityGraph(self.n_cells, self.face_cells, np.ones(self.n_faces, dtype=np.int64))

    def one_sided_transmissibility(self, cell: int, face: int) -> float:
        k, l = self.face_cells[face]
        if cell not in (k, l):
            raise MeshError(f"cell {cell} is not adjacent to face {face}")
        if self.face_centroid is None or self.face_normal is None:
            return float(self.trans[face, 0 if cell == k else 1])
        sign = 1.0 if cell == k else -1.0
        return float(
            half_transmissibility(
                self.face_area[face],
                sign * self.face_normal[face],
                self.perm[cell],
                self.face_centroid[face],
                self.centroid[cell],
            )
        )

    def cell_ijk(self, cell):
        nx, ny, _ = self.dims
        cell = np.asarray(cell)
        return cell % nx, (cell // nx) % ny, cell // (nx * ny)

    def cell_index(self, i, j, k) -> int:
        nx, ny, _ = self.dims
        return int(i + nx * (j + ny * k))


def build_cartesian_mesh(nx, ny, nz, hx, hy, hz, perm_field, poro_field) -> Mesh:
    """Axis-aligned box mesh; cell ``(i, j, k)`` has index ``i + nx*(j + ny*k)``.

    ``perm_field`` may be a scalar, an ``(n,)`` isotropic field or an ``(n, 3)``
    diagonal field; ``poro_field`` a scalar or ``(n,)`` array.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError("cell counts must be positive")
    if min(hx, hy, hz) <= 0:
        raise MeshError("spacings must be positive")
    n = nx * ny * nz
    perm = np.asarray(perm_field, dtype=float)
    if perm.ndim == 0:
        perm = np.full((n, 3), float(perm))
    elif perm.ndim == 1:
        if len(perm) != n:
            raise MeshError(f"permeability field has {len(perm)} entries, expected {n}")
        perm = np.repeat(perm[:, None], 3, axis=1)
    elif perm.shape != (n, 3):
        raise MeshError(f"permeability field has shape {perm.shape}, expected ({n}, 3)")
    poro = np.asarray(poro_field, dtype=float)
    poro = np.full(n, float(poro)) if poro.ndim == 0 else poro
    if len(poro) != n:
        raise MeshError(f"porosity field has {len(poro)} entries, expected {n}")
    if np.any(perm <= 0) or np.any(poro <= 0):
        raise MeshError("permeability and porosity must be positive")

    idx = np.arange(n).reshape(nz, ny, nx)
    k_, j_, i_ = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    centroid = np.stack([(i_ + 0.5) * hx, (j_ + 0.5) * hy, (k_ + 0.5) * hz], axis=-1).reshape(n, 3)
    h = np.array([hx, hy, hz], dtype=float)

    pairs, areas, normals = [], [], []
    for axis, (a, b) in enumerate([(idx[:, :, :-1], idx[:, :, 1:]), (idx[:, :-1, :], idx[:, 1:, :]), (idx[:-1], idx[1:])]):
        p = np.stack([a.ravel(), b.ravel()], axis=1)
        pairs.append(p)
        areas.append(np.full(len(p), np.prod(h) / h[axis]))
        nrm = np.zeros((len(p), 3))
        nrm[:, axis] = 1.0
        normals.append(nrm)
    face_cells = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    face_area = np.concatenate(areas)
    face_normal = np.concatenate(normals)
    face_centroid = 0.5 * (centroid[face_cells[:, 0]] + centroid[face_cells[:, 1]])

    tk = half_transmissibility(face_area, face_normal, perm[face_cells[:, 0]], face_centroid, centroid[face_cells[:, 0]])
    tl = half_transmissibility(face_area, -face_normal, perm[face_cells[:, 1]], face_centroid, centroid[face_cells[:, 1]])
    return Mesh(
        volume=np.full(n, hx * hy * hz),
        porosity=poro,
        perm=perm,
        centroid=centroid,
        face_cells=face_cells,
        face_area=face_area,
        trans=np.stack([tk, tl], axis=1),
        face_centroid=face_centroid,
        face_normal=face_normal,
        dims=(nx, ny, nz),
        spacing=(float(hx), float(hy), float(hz)),
    )


def build_cell_well_graph(mesh: Mesh, wells) -> ConnectivityGraph:
    """Cells plus one vertex per well; each perforation adds a well-cell edge."""
    nc = mesh.n_cells
    edges = [mesh.face_cells]
    for w, well in enumerate(wells.wells):
        cells = np.asarray(well.cells, dtype=np.int64)
        if np.any(cells < 0) or np.any(cells >= nc):
            raise MeshError(f"well {well.name!r} perforates a nonexistent cell")
        edges.append(np.stack([cells, np.full(len(cells), nc + w)], axis=1))
    e = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
    return ConnectivityGraph(nc + len(wells.wells), e, np.ones(len(e), dtype=np.int64))


def read_mesh(path) -> Mesh:
    """Read the text mesh format (see README): header ``nc nf``, cell lines, face lines."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise MeshError("empty mesh file")
    nc, nf = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + nc + nf:
        raise MeshError(f"expected {1 + nc + nf} data lines, found {len(rows)}")
    cells = np.array(rows[1 : 1 + nc], dtype=float).reshape(nc, 8)
    faces = np.array(rows[1 + nc :], dtype=float).reshape(nf, 5)
    kl = faces[:, :2].astype(np.int64)
    tr = faces[:, 3:5].copy()
    swap = kl[:, 0] > kl[:, 1]
    kl[swap] = kl[swap][:, ::-1]
    tr[swap] = tr[swap][:, ::-1]
    return Mesh(
        volume=cells[:, 0],
        porosity=cells[:, 1],
        perm=cells[:, 2:5],
        centroid=cells[:, 5:8],
        face_cells=kl,
        face_area=faces[:, 2],
        trans=tr,
    )


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_cells} {mesh.n_faces}"]
    for v, phi, k, c in zip(mesh.volume, mesh.porosity, mesh.perm, mesh.centroid):
        lines.append(" ".join(repr(float(x)) for x in (v, phi, *k, *c)))
    for (k, l), a, (tk, tl) in zip(mesh.face_cells, mesh.face_area, mesh.trans):
        lines.append(f"{k} {l} {float(a)!r} {float(tk)!r} {float(tl)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
