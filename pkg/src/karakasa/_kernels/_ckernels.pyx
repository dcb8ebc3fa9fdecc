# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled routing kernels for identifier widths up to 64 bits.

Mirrors ``_pykernels`` exactly; the test-suite cross-checks the two.
"""
import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t


cdef inline bint _in_half_open(uint64_t x, uint64_t a, uint64_t b) noexcept nogil:
    if a < b:
        return a < x and x <= b
    return x > a or x <= b


cdef inline bint _in_open(uint64_t x, uint64_t a, uint64_t b) noexcept nogil:
    if a < b:
        return a < x and x < b
    if a == b:
        return x != a
    return x > a or x < b


cdef inline Py_ssize_t _lower_bound(const uint64_t[::1] ids, uint64_t key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = ids.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if ids[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


def finger_table(const uint64_t[::1] ids, int m):
    cdef Py_ssize_t n = ids.shape[0], i, j
    cdef int k
    cdef uint64_t mask = <uint64_t>0xFFFFFFFFFFFFFFFF if m == 64 else ((<uint64_t>1 << m) - 1)
    out = np.empty((n, m), dtype=np.int32)
    cdef int32_t[:, ::1] table = out
    with nogil:
        for i in range(n):
            for k in range(m):
                j = _lower_bound(ids, (ids[i] + (<uint64_t>1 << k)) & mask)
                table[i, k] = 0 if j == n else <int32_t>j
    return out


cdef (int64_t, int64_t) _lookup(const uint64_t[::1] ids, const int32_t[:, ::1] table,
                                int m, int64_t origin, uint64_t key) noexcept nogil:
    cdef Py_ssize_t n = ids.shape[0]
    cdef int64_t cur = origin, nxt, succ, f, queries = 0
    cdef int64_t prev = origin - 1 if origin > 0 else n - 1
    cdef uint64_t here
    cdef int k
    if n == 1 or _in_half_open(key, ids[prev], ids[origin]):
        return origin, 0
    while True:
        here = ids[cur]
        succ = table[cur, 0]
        if _in_half_open(key, here, ids[succ]):
            return succ, queries
        nxt = succ
        for k in range(m - 1, -1, -1):
            f = table[cur, k]
            if _in_open(ids[f], here, key):
                nxt = f
                break
        cur = nxt
        queries += 1


def lookup_one(const uint64_t[::1] ids, const int32_t[:, ::1] table, int m,
               int64_t origin, uint64_t key):
    cdef int64_t owner, queries
    owner, queries = _lookup(ids, table, m, origin, key)
    return owner, queries


def lookup_many(const uint64_t[::1] ids, const int32_t[:, ::1] table, int m,
                const int64_t[::1] origins, const uint64_t[::1] keys):
    cdef Py_ssize_t i, count = origins.shape[0]
    owners_arr = np.empty(count, dtype=np.int64)
    queries_arr = np.empty(count, dtype=np.int64)
    cdef int64_t[::1] owners = owners_arr
    cdef int64_t[::1] queries = queries_arr
    with nogil:
        for i in range(count):
            owners[i], queries[i] = _lookup(ids, table, m, origins[i], keys[i])
    return owners_arr, queries_arr
