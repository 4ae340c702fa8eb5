"""Per-molecule compositional feature vectors and the pairwise density factor.

A molecule's feature row counts the gene labels among its k nearest
neighbors (itself included by default). An optional Gaussian mode weights
each neighbor's contribution by exp(-d^2 / (2 sigma^2)) instead of 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GenePanel, MoleculeTable, SpatialIndex, knn_bulk
from .errors import KTooLarge


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (n, panel size), non-negative
    k_used: int
    gaussian_bandwidth: float | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def panel_size(self) -> int:
        return self.values.shape[1]

    def row_l1(self) -> np.ndarray:
        return np.abs(self.values).sum(axis=1)


def one_hot(label: str, panel: GenePanel) -> np.ndarray:
    vec = np.zeros(panel.size, dtype=np.float64)
    vec[panel.index_of(label)] = 1.0
    return vec


def compositional_features(
    table: MoleculeTable,
    index: SpatialIndex,
    k: int,
    gaussian_bandwidth: float | None = None,
    include_self: bool = True,
) -> FeatureMatrix:
    """Sum of neighbor one-hot label vectors for every molecule.

    With plain counting each row sums to exactly k. gaussian_bandwidth, if
    given, must be positive and switches on distance-weighted counting.
    """
    n = len(table)
    if k > n or (not include_self and k > n - 1):
        raise KTooLarge(f"k={k} too large for {n} molecules")
    if gaussian_bandwidth is not None and not gaussian_bandwidth > 0:
        raise ValueError("gaussian_bandwidth must be > 0")

    ids, dist = knn_bulk(index, k, exclude_self=not include_self)
    if gaussian_bandwidth is None:
        weights = np.ones_like(dist)
    else:
        weights = np.exp(-(dist**2) / (2.0 * gaussian_bandwidth**2))

    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = table.label_ids[ids.ravel()]
    values = np.zeros((n, table.panel.size), dtype=np.float64)
    np.add.at(values, (rows, cols), weights.ravel())
    return FeatureMatrix(values, k_used=k, gaussian_bandwidth=gaussian_bandwidth)


def density_factor(x_i: np.ndarray, x_j: np.ndarray) -> float:
    """min of the two feature L1 norms; downweights sparse-region evidence."""
    return float(min(np.abs(x_i).sum(), np.abs(x_j).sum()))


def dump_features(features: FeatureMatrix, path, delimiter: str = ",") -> None:
    """Debug dump: one delimited row of feature values per molecule."""
    with open(path, "w") as fh:
        for row in features.values:
            fh.write(delimiter.join(repr(float(v)) for v in row))
            fh.write("\n")
