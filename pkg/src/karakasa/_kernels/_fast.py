"""numpy front-end over the compiled kernels (identifier widths <= 64 bits)."""
import numpy as np

from . import _ckernels

NAME = "cython"


def prepare_ids(ids):
    return np.asarray(ids, dtype=np.uint64)


def successor_indices(ids, keys):
    idx = np.searchsorted(ids, np.asarray(keys, dtype=np.uint64), side="left")
    idx[idx == len(ids)] = 0
    return idx


def holder_rows(ids, primaries, k):
    n = len(ids)
    idx = (np.asarray(primaries, dtype=np.int64)[:, None] + np.arange(k)) % n
    return list(map(tuple, ids[idx].tolist()))


def finger_table(ids, m):
    return _ckernels.finger_table(ids, m)


def finger_ids(ids, table):
    return [tuple(row) for row in ids[table].tolist()]


def lookup(ids, table, m, origin, key):
    return _ckernels.lookup_one(ids, table, m, origin, key)


def lookup_many(ids, table, m, origins, keys):
    return _ckernels.lookup_many(ids, table, m, np.asarray(origins, dtype=np.int64),
                                 np.asarray(keys, dtype=np.uint64))
