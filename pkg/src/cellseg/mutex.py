"""Mutex watershed partitioning of a signed graph.

Edges are processed in order of decreasing absolute weight (-inf repulsive
edges first, ties by edge insertion id). Attractive edges merge their two
components unless a mutex constraint forbids it; repulsive edges record a
constraint between the two components unless those are already merged.
Zero-weight edges carry no evidence and are skipped.

The inner loop runs in a compiled kernel when the extension built, with a
pure-Python fallback selected at import. Set CELLSEG_PURE_PYTHON=1 to force
the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _mwspy
from .errors import InstanceTooLarge
from .graphs import SignedGraph

try:
    from . import _mwscy
except ImportError:
    _mwscy = None

USING_COMPILED = _mwscy is not None and not os.environ.get("CELLSEG_PURE_PYTHON")


@dataclass
class Partition:
    labels: np.ndarray  # (n,) dense component ids, 0-based
    active_attractive: np.ndarray  # edge ids whose merge was applied

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def edge_order(graph: SignedGraph) -> np.ndarray:
    """Processing order: descending |weight|, ties by ascending edge id."""
    return np.argsort(-np.abs(graph.weight), kind="stable").astype(np.int64)


def _dense_labels(roots: np.ndarray) -> np.ndarray:
    labels = np.empty_like(roots)
    remap: dict[int, int] = {}
    for i, r in enumerate(roots.tolist()):
        labels[i] = remap.setdefault(r, len(remap))
    return labels


def mutex_watershed(graph: SignedGraph, force_python: bool = False) -> Partition:
    """Partition the signed graph into cell components."""
    order = edge_order(graph)
    u = np.ascontiguousarray(graph.u, dtype=np.int64)
    v = np.ascontiguousarray(graph.v, dtype=np.int64)
    w = np.ascontiguousarray(graph.weight, dtype=np.float64)
    rep = np.ascontiguousarray(graph.repulsive.astype(np.uint8))
    if USING_COMPILED and not force_python:
        roots, active = _mwscy.run_kernel(graph.n, u, v, w, rep, order)
    else:
        roots, active = _mwspy.run_kernel(graph.n, u, v, w, rep, order)
    return Partition(labels=_dense_labels(np.asarray(roots)),
                     active_attractive=np.flatnonzero(active).astype(np.int64))


def oracle_partition(graph: SignedGraph) -> Partition:
    """Test oracle: the same greedy rule on explicit component sets.

    Deliberately naive (no union-find, no rank): components live in a flat
    list of sets, mutex constraints in a list of forbidden node-pair sets.
    Only for tiny instances.
    """
    if graph.n > 12 or graph.n_edges > 30:
        raise InstanceTooLarge("oracle accepts n <= 12 and <= 30 edges")

    components: list[set[int]] = [{i} for i in range(graph.n)]
    forbidden: list[tuple[int, int]] = []  # node pairs joined by processed repulsive edges
    active: list[int] = []

    def comp_of(node: int) -> set[int]:
        for comp in components:
            if node in comp:
                return comp
        raise AssertionError("node lost from partition")

    for e in edge_order(graph):
        e = int(e)
        if graph.weight[e] == 0.0:
            continue
        a, b = int(graph.u[e]), int(graph.v[e])
        ca, cb = comp_of(a), comp_of(b)
        if graph.repulsive[e]:
            if ca is not cb:
                forbidden.append((a, b))
        else:
            if ca is cb:
                continue
            blocked = any((x in ca and y in cb) or (x in cb and y in ca)
                          for x, y in forbidden)
            if blocked:
                continue
            components.remove(cb)
            ca |= cb
            active.append(e)

    labels = np.empty(graph.n, dtype=np.int64)
    ordered = sorted(components, key=min)
    for cid, comp in enumerate(ordered):
        for node in comp:
            labels[node] = cid
    # renumber by first molecule appearance to match the kernel convention
    return Partition(labels=_dense_labels(labels),
                     active_attractive=np.array(sorted(active), dtype=np.int64))


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two labelings induce identical groupings (up to renaming)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    fwd: dict[int, int] = {}
    back: dict[int, int] = {}
    for x, y in zip(a.tolist(), b.tolist()):
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True
