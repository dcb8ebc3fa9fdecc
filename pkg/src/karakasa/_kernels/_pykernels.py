"""Pure-Python routing kernels.

Works for any identifier width.  ``ids`` is a sorted list of node ids and a
finger table is a list of rows of node *indices* into ``ids``.
"""
from bisect import bisect_left

NAME = "python"


def prepare_ids(ids):
    return list(ids)


def in_half_open(x, a, b):
    """x in (a, b] on the circle; a == b covers the whole circle."""
    if a < b:
        return a < x <= b
    return x > a or x <= b


def in_open(x, a, b):
    if a < b:
        return a < x < b
    if a == b:
        return x != a
    return x > a or x < b


def successor_index(ids, key):
    i = bisect_left(ids, key)
    return 0 if i == len(ids) else i


def successor_indices(ids, keys):
    return [successor_index(ids, k) for k in keys]


def holder_rows(ids, primaries, k):
    """For each primary index, the ids of it and its ``k - 1`` clockwise successors."""
    n = len(ids)
    return [tuple(ids[(p + j) % n] for j in range(k)) for p in primaries]


def finger_table(ids, m):
    mask = (1 << m) - 1
    n = len(ids)
    table = []
    for a in ids:
        row = []
        for k in range(m):
            i = bisect_left(ids, (a + (1 << k)) & mask)
            row.append(0 if i == n else i)
        table.append(row)
    return table


def finger_ids(ids, table):
    return [tuple(ids[i] for i in row) for row in table]


def lookup(ids, table, m, origin, key):
    """Iterative closest-preceding-finger routing.

    Returns ``(owner_index, queries)`` where ``queries`` counts the remote
    nodes the origin had to ask.  Zero when the origin can answer from its
    own table.
    """
    n = len(ids)
    if n == 1 or in_half_open(key, ids[origin - 1], ids[origin]):
        return origin, 0
    cur = origin
    queries = 0
    while True:
        row = table[cur]
        here = ids[cur]
        succ = row[0]
        if in_half_open(key, here, ids[succ]):
            return succ, queries
        nxt = succ
        for k in range(m - 1, -1, -1):
            f = row[k]
            if in_open(ids[f], here, key):
                nxt = f
                break
        cur = nxt
        queries += 1


def lookup_many(ids, table, m, origins, keys):
    owners = []
    queries = []
    for o, k in zip(origins, keys):
        w, q = lookup(ids, table, m, o, k)
        owners.append(w)
        queries.append(q)
    return owners, queries
