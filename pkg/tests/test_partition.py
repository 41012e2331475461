import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wellfas.grid import ConnectivityGraph, build_cartesian_mesh
from wellfas.partition import (PartitionError, is_connected_partition, kway_partition, near_well_mask,
                               well_aware_partition)


def path(n, weights=None):
    e = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return ConnectivityGraph(n, e, np.ones(n - 1, np.int64) if weights is None else weights)


def groups(part):
    return sorted(sorted(m.tolist()) for m in part.members)


def test_single_part():
    p = kway_partition(path(5), 1)
    assert p.n_parts == 1


def test_path_split_in_halves():
    assert groups(kway_partition(path(4), 2)) == [[0, 1], [2, 3]]


def test_path_cut_avoids_heavy_edge():
    g = groups(kway_partition(path(4, np.array([1, 10**6, 1])), 2))
    assert g in ([[0], [1, 2, 3]], [[0, 1, 2], [3]])


def test_invalid_k():
    with pytest.raises(PartitionError):
        kway_partition(path(3), 4)
    with pytest.raises(PartitionError):
        kway_partition(path(3), 0)


def test_center_well_keeps_neighbours():
    g = build_cartesian_mesh(5, 5, 1, 1, 1, 1, 1.0, 0.2).cell_graph()
    part = well_aware_partition(g, [[12]], n_lay=4, scale=1e6, k=4, seed=0)
    lab = part.labels
    assert all(lab[c] == lab[12] for c in (7, 11, 13, 17))
    assert is_connected_partition(g, part)


def test_no_modification_equals_kway():
    g = build_cartesian_mesh(6, 5, 1, 1, 1, 1, 1.0, 0.2).cell_graph()
    a = well_aware_partition(g, [], n_lay=0, scale=1, k=5, seed=3)
    b = kway_partition(g, 5, seed=3)
    assert np.array_equal(a.labels, b.labels)


def test_near_well_mask_layers():
    g = path(7)
    mask = near_well_mask(g.adjacency(), [[3]], 2)
    np.testing.assert_array_equal(np.flatnonzero(mask), [1, 2, 3, 4, 5])


def test_deterministic_per_seed():
    g = build_cartesian_mesh(8, 8, 2, 1, 1, 1, 1.0, 0.2).cell_graph()
    a = well_aware_partition(g, [[0], [63]], k=6, seed=11)
    b = well_aware_partition(g, [[0], [63]], k=6, seed=11)
    assert np.array_equal(a.labels, b.labels)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(3, 9), ny=st.integers(3, 9), k=st.integers(2, 8), seed=st.integers(0, 1000),
       n_wells=st.integers(0, 3))
def test_partition_postconditions(nx, ny, k, seed, n_wells):
    g = build_cartesian_mesh(nx, ny, 1, 1, 1, 1, 1.0, 0.2).cell_graph()
    k = min(k, g.n_vertices)
    rng = np.random.default_rng(seed)
    wells = [rng.choice(g.n_vertices, size=rng.integers(1, 3), replace=False) for _ in range(n_wells)]
    part = well_aware_partition(g, wells, n_lay=2, scale=1e6, k=k, seed=seed)
    assert part.n_parts <= k
    assert np.all(part.sizes() > 0)
    assert is_connected_partition(g, part, wells)
    adj = g.adjacency()
    for cells in wells:
        for c in cells:
            nb = adj.indices[adj.indptr[c]:adj.indptr[c + 1]]
            assert np.all(part.labels[nb] == part.labels[c])


def test_scattered_perforations_connect_through_the_well():
    g = build_cartesian_mesh(3, 9, 1, 1, 1, 1, 1.0, 0.2).cell_graph()
    wells = [[22], [0, 18]]
    part = well_aware_partition(g, wells, n_lay=2, scale=1e6, k=4, seed=601)
    assert part.labels[0] == part.labels[18]
    assert is_connected_partition(g, part, wells)
