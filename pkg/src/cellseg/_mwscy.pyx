# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled mutex watershed kernel; mirrors _mwspy.run_kernel."""

import numpy as np

cimport numpy as cnp
from cython.operator cimport dereference as deref
from cython.operator cimport preincrement as inc
from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector

ctypedef cnp.int64_t i64


cdef inline i64 _find(i64[::1] parent, i64 x) nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def run_kernel(Py_ssize_t n,
               i64[::1] u,
               i64[::1] v,
               double[::1] weight,
               cnp.uint8_t[::1] repulsive,
               i64[::1] order):
    """Greedy pass over edges in `order`. Returns (roots, active_mask)."""
    parent_arr = np.arange(n, dtype=np.int64)
    size_arr = np.ones(n, dtype=np.int64)
    active_arr = np.zeros(u.shape[0], dtype=np.uint8)
    cdef i64[::1] parent = parent_arr
    cdef i64[::1] size = size_arr
    cdef cnp.uint8_t[::1] active = active_arr

    cdef vector[unordered_set[i64]] mutexes
    mutexes.resize(n)

    cdef Py_ssize_t k
    cdef i64 e, ra, rb, small, big, tmp
    cdef double w
    cdef bint blocked
    cdef unordered_set[i64].iterator it

    for k in range(order.shape[0]):
        e = order[k]
        w = weight[e]
        if w == 0.0:
            continue
        ra = _find(parent, u[e])
        rb = _find(parent, v[e])
        if repulsive[e]:
            if ra == rb:
                continue
            mutexes[ra].insert(e)
            mutexes[rb].insert(e)
        else:
            if ra == rb:
                continue
            if mutexes[ra].size() <= mutexes[rb].size():
                small = ra
                big = rb
            else:
                small = rb
                big = ra
            blocked = False
            it = mutexes[small].begin()
            while it != mutexes[small].end():
                if mutexes[big].count(deref(it)) > 0:
                    blocked = True
                    break
                inc(it)
            if blocked:
                continue
            if size[ra] < size[rb]:
                tmp = ra
                ra = rb
                rb = tmp
            parent[rb] = ra
            size[ra] += size[rb]
            if mutexes[rb].size() > mutexes[ra].size():
                mutexes[ra].swap(mutexes[rb])
            it = mutexes[rb].begin()
            while it != mutexes[rb].end():
                mutexes[ra].insert(deref(it))
                inc(it)
            mutexes[rb].clear()
            active[e] = 1

    roots = np.empty(n, dtype=np.int64)
    cdef i64[::1] roots_mv = roots
    for k in range(n):
        roots_mv[k] = _find(parent, k)
    return roots, active_arr.astype(bool)
