"""Signed graph construction: attractive 5-NN edges, repulsive annulus edges.

Attractive edges connect each molecule to its nearest neighbors and carry
weight rho * y; repulsive edges connect molecules across the (2r, 6r]
annulus and carry rho * (y - 1), hardened to -inf beyond 4r. Edge order in
the graph (attractive block first, then repulsive in generation order) is
the tie-breaking order for partitioning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import SpatialIndex
from .errors import DimensionMismatch, TooFewMolecules
from .features import FeatureMatrix
from .pairnet import PairNet, encode_all, latent_posteriors

log = logging.getLogger(__name__)


@dataclass
class SignedGraph:
    n: int
    u: np.ndarray  # (E,) int64, u < v canonical
    v: np.ndarray
    weight: np.ndarray  # (E,) float64; attractive >= 0, repulsive <= 0 or -inf
    repulsive: np.ndarray  # (E,) bool

    @property
    def n_edges(self) -> int:
        return self.u.shape[0]

    def validate(self) -> None:
        if self.n_edges == 0:
            return
        if self.u.min() < 0 or self.v.max() >= self.n:
            raise ValueError("edge endpoint outside node range")
        if np.any(self.u >= self.v):
            raise ValueError("edges must be canonical u < v")
        if np.any(np.isnan(self.weight)):
            raise ValueError("edge weights must not be NaN")
        att = ~self.repulsive
        if np.any(self.weight[att] < 0) or np.any(~np.isfinite(self.weight[att])):
            raise ValueError("attractive weights must be finite and >= 0")
        if np.any(self.weight[self.repulsive] > 0):
            raise ValueError("repulsive weights must be <= 0")
        key = self.u * self.n + self.v + self.repulsive * self.n * self.n
        if np.unique(key).size != key.size:
            raise ValueError("duplicate (u, v, sign) edge")


def attractive_edges(index: SpatialIndex, m: int = 5) -> np.ndarray:
    """Deduplicated (u, v) pairs joining every molecule to its m nearest
    neighbors (self excluded), sorted lexicographically."""
    from .data import knn_bulk

    n = index.n
    if n <= m:
        raise TooFewMolecules(f"need more than {m} molecules, have {n}")
    ids, _ = knn_bulk(index, m, exclude_self=True)
    src = np.repeat(np.arange(n, dtype=np.int64), m)
    dst = ids.ravel()
    pairs = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1)
    return np.unique(pairs, axis=0)


def repulsive_edges(
    index: SpatialIndex,
    r_cell: float,
    per_node: int = 15,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Annulus partners per molecule: up to per_node uniform draws without
    replacement from (2r, 6r]. Returns (pairs (E, 2), force_infinite (E,))
    with pairs canonical and deduplicated; force_infinite marks distance
    strictly beyond 4r. Infinite partners count against the per-node budget.
    """
    if r_cell <= 0:
        raise ValueError("r_cell must be > 0")
    rng = rng or np.random.default_rng(0)
    n = index.n
    lo, mid, hi = 2.0 * r_cell, 4.0 * r_cell, 6.0 * r_cell
    seen: set[tuple[int, int]] = set()
    us: list[int] = []
    vs: list[int] = []
    inf_flags: list[bool] = []
    for i in range(n):
        cand = index.tree.query_ball_point(index.points[i], np.nextafter(hi, np.inf))
        cand = np.asarray(cand, dtype=np.int64)
        d = index.distances_to(index.points[i], cand)
        keep = (d > lo) & (d <= hi)
        cand, d = cand[keep], d[keep]
        if cand.size == 0:
            continue
        if cand.size > per_node:
            pick = rng.choice(cand.size, size=per_node, replace=False)
            cand, d = cand[pick], d[pick]
        for j, dij in zip(cand, d):
            a, b = (i, int(j)) if i < j else (int(j), i)
            if (a, b) in seen:
                continue
            seen.add((a, b))
            us.append(a)
            vs.append(b)
            inf_flags.append(bool(dij > mid))
    pairs = np.stack([np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)], axis=1) \
        if us else np.empty((0, 2), dtype=np.int64)
    return pairs, np.asarray(inf_flags, dtype=bool)


def weight_graph(
    net: PairNet,
    features: FeatureMatrix,
    attractive: np.ndarray,
    repulsive: np.ndarray,
    force_infinite: np.ndarray | None = None,
) -> SignedGraph:
    """Attach posterior-and-density weights to the edge sets.

    Attractive weight = rho * y; finite repulsive weight = rho * (y - 1);
    force_infinite repulsive edges get -inf regardless of the network. A
    pair present in both sets keeps only its attractive copy (the nearest-
    neighbor adjacency is the stronger prior); the drop is logged.
    """
    n = features.n
    attractive = np.asarray(attractive, dtype=np.int64).reshape(-1, 2)
    repulsive = np.asarray(repulsive, dtype=np.int64).reshape(-1, 2)
    if force_infinite is None:
        force_infinite = np.zeros(len(repulsive), dtype=bool)
    force_infinite = np.asarray(force_infinite, dtype=bool)
    for pairs in (attractive, repulsive):
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
            raise DimensionMismatch("edge endpoint outside the feature matrix")

    if len(repulsive):
        att_keys = set(map(tuple, attractive.tolist()))
        rep_keys = [tuple(p) for p in repulsive.tolist()]
        clash = np.array([kk in att_keys for kk in rep_keys], dtype=bool)
        if clash.any():
            log.warning("dropping %d repulsive edges that duplicate attractive pairs",
                        int(clash.sum()))
            repulsive = repulsive[~clash]
            force_infinite = force_infinite[~clash]

    z = encode_all(net, features.values)
    l1 = features.row_l1()

    def rho_y(pairs):
        if len(pairs) == 0:
            return np.zeros(0), np.zeros(0)
        rho = np.minimum(l1[pairs[:, 0]], l1[pairs[:, 1]])
        y = latent_posteriors(net, z[pairs[:, 0]], z[pairs[:, 1]])
        return rho, y

    rho_a, y_a = rho_y(attractive)
    w_att = rho_a * y_a
    rho_r, y_r = rho_y(repulsive)
    w_rep = rho_r * (y_r - 1.0)
    w_rep[force_infinite] = -np.inf

    u = np.concatenate([attractive[:, 0], repulsive[:, 0]])
    v = np.concatenate([attractive[:, 1], repulsive[:, 1]])
    weight = np.concatenate([w_att, w_rep])
    rep_mask = np.concatenate([np.zeros(len(attractive), dtype=bool),
                               np.ones(len(repulsive), dtype=bool)])
    graph = SignedGraph(n=n, u=u.astype(np.int64), v=v.astype(np.int64),
                        weight=weight.astype(np.float64), repulsive=rep_mask)
    graph.validate()
    return graph


def dump_graph(graph: SignedGraph, path, delimiter: str = ",") -> None:
    """Edge list as delimited text; -inf weights serialize as the literal -inf."""
    with open(path, "w") as fh:
        fh.write(delimiter.join(["u", "v", "sign", "weight"]) + "\n")
        for k in range(graph.n_edges):
            sign = "repulsive" if graph.repulsive[k] else "attractive"
            w = graph.weight[k]
            w_str = "-inf" if np.isneginf(w) else repr(float(w))
            fh.write(delimiter.join([str(int(graph.u[k])), str(int(graph.v[k])), sign, w_str]) + "\n")
