import numpy as np
import pytest

from cellseg.data import GenePanel, MoleculeTable, build_spatial_index


@pytest.fixture
def random_table():
    """500 molecules over 4 genes, uniform in a 100x100 box."""
    rng = np.random.default_rng(1234)
    positions = rng.uniform(0, 100, size=(500, 2))
    labels = rng.integers(0, 4, size=500)
    panel = GenePanel(("A", "B", "C", "D"))
    return MoleculeTable(positions, labels, panel)


@pytest.fixture
def random_index(random_table):
    return build_spatial_index(random_table)


def brute_force_knn(positions, query, k, exclude_id=None):
    """Reference kNN: all pairwise distances, sorted by (distance, id)."""
    query = np.asarray(query, dtype=np.float64)
    diff = positions - query
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    ids = np.arange(len(positions))
    if exclude_id is not None:
        keep = ids != exclude_id
        ids, dist = ids[keep], dist[keep]
    order = np.lexsort((ids, dist))[:k]
    return [(int(ids[o]), float(dist[o])) for o in order]


def brute_force_annulus(positions, query, r_min, r_max):
    query = np.asarray(query, dtype=np.float64)
    diff = positions - query
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return [int(i) for i in np.flatnonzero((dist > r_min) & (dist <= r_max))]
