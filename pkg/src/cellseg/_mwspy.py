"""Pure-Python mutex watershed kernel.

Union-find with per-root mutex sets. Two components are forbidden to merge
iff their mutex sets intersect; every processed repulsive edge contributes
its own id to both endpoint components' sets, so the intersection test is
exactly "some repulsive edge spans the two components". Sets merge smaller
into larger for near-linear totals.

The compiled kernel in _mwscy mirrors this file statement for statement;
keep the two in sync.
"""

from __future__ import annotations

import numpy as np


def run_kernel(n, u, v, weight, repulsive, order, trace=None):
    """Greedy pass over edges in `order`. Returns (roots, active_mask).

    trace, if a list, receives (edge_id, action) tuples with action in
    {"merge", "blocked", "mutex", "skip-merged", "skip-zero"}.
    """
    parent = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    mutexes: list[set[int]] = [set() for _ in range(n)]
    active = np.zeros(len(u), dtype=bool)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in order:
        e = int(e)
        w = weight[e]
        if w == 0.0:
            if trace is not None:
                trace.append((e, "skip-zero"))
            continue
        ra, rb = find(int(u[e])), find(int(v[e]))
        if repulsive[e]:
            if ra == rb:
                if trace is not None:
                    trace.append((e, "skip-merged"))
                continue
            mutexes[ra].add(e)
            mutexes[rb].add(e)
            if trace is not None:
                trace.append((e, "mutex"))
        else:
            if ra == rb:
                if trace is not None:
                    trace.append((e, "skip-merged"))
                continue
            small, big = (ra, rb) if len(mutexes[ra]) <= len(mutexes[rb]) else (rb, ra)
            if not mutexes[small].isdisjoint(mutexes[big]):
                if trace is not None:
                    trace.append((e, "blocked"))
                continue
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
            if len(mutexes[rb]) > len(mutexes[ra]):
                mutexes[ra], mutexes[rb] = mutexes[rb], mutexes[ra]
            mutexes[ra].update(mutexes[rb])
            mutexes[rb] = set()
            active[e] = True
            if trace is not None:
                trace.append((e, "merge"))

    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    return roots, active
