"""Chord ring simulation.

Global-view discrete simulation: no latency or loss, "messages" are counted
routing steps.  Lookups are iterative; every remote query is a request and a
reply, so it is charged ``MESSAGES_PER_QUERY`` messages.
"""
from __future__ import annotations

import hashlib
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import _kernels
from .errors import BadM, EmptyRing, IdCollision, NotEnoughNodes, NotStabilized, UnknownNode

DEFAULT_M = 64
DEFAULT_SUC = 8
MESSAGES_PER_QUERY = 2
# per-node stabilization messages stay within STABILIZE_C * log2(N)**2 after a single join or leave
STABILIZE_C = 2
SUPPORTED_M = (16, 32, 64, 160)


def ring_id(data: bytes, m: int = DEFAULT_M) -> int:
    """Top ``m`` bits of SHA-256(data)."""
    if not 1 <= m <= 160:
        raise BadM(f"m must be within [1, 160], got {m}")
    return int.from_bytes(hashlib.sha256(data).digest(), "big") >> (256 - m)


in_half_open = _kernels.python.in_half_open
in_open = _kernels.python.in_open


def responsible_node(ring: Sequence[int], key: int) -> int:
    """First node clockwise at or after ``key``; ``ring`` is sorted."""
    if not ring:
        raise EmptyRing("no nodes in ring")
    i = bisect_left(ring, key)
    return ring[0] if i == len(ring) else ring[i]


def replica_set(ring: Sequence[int], key: int, r: int) -> list[int]:
    """Primary owner of ``key`` followed by its ``r`` clockwise successors."""
    if not ring:
        raise EmptyRing("no nodes in ring")
    if r < 0 or r > len(ring) - 1:
        raise NotEnoughNodes(f"{r} replicas need {r + 1} nodes, ring has {len(ring)}")
    i = bisect_left(ring, key) % len(ring)
    return [ring[(i + j) % len(ring)] for j in range(r + 1)]


@dataclass(frozen=True)
class RoutingTable:
    successors: tuple[int, ...] = ()
    predecessor: int | None = None
    fingers: tuple[int, ...] = ()


@dataclass
class OverlayNode:
    address: str
    node_id: int
    routing: RoutingTable = field(default_factory=RoutingTable)

    @classmethod
    def from_address(cls, address: str, m: int = DEFAULT_M) -> "OverlayNode":
        return cls(address, ring_id(address.encode(), m))


def _compress(values: Sequence[int]) -> str:
    # run-length form keeps 64-entry finger rows readable
    out = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] == values[i]:
            j += 1
        out.append(f"{values[i]}*{j - i + 1}" if j > i else str(values[i]))
        i = j + 1
    return ",".join(out)


class Ring:
    """An m-bit Chord ring.

    ``join``/``leave`` only change membership; routing tables are refreshed by
    ``stabilize``, and lookups before that raise NotStabilized.
    """

    def __init__(self, m: int = DEFAULT_M, suc: int = DEFAULT_SUC, backend: str | None = None):
        if not 1 <= m <= 160:
            raise BadM(f"m must be within [1, 160], got {m}")
        if suc < 0:
            raise ValueError("suc must be >= 0")
        self.m = m
        self.suc = suc
        self.kernels = _kernels.select(m, backend)
        self.nodes: dict[int, OverlayNode] = {}
        self._ids: list[int] = []
        self._stable = True
        self._kids = None
        self._table = None
        self._index: dict[int, int] = {}
        self.last_refresh: dict[int, int] = {}

    def __getstate__(self):
        state = dict(self.__dict__)
        state["kernels"] = self.kernels.NAME
        return state

    def __setstate__(self, state):
        state = dict(state)
        state["kernels"] = _kernels.select(state["m"], state["kernels"])
        self.__dict__.update(state)

    # --- membership ------------------------------------------------------

    @property
    def ids(self) -> list[int]:
        return self._ids

    @property
    def stable(self) -> bool:
        return self._stable

    def __len__(self):
        return len(self._ids)

    def __contains__(self, node_id):
        return node_id in self.nodes

    def join(self, node: OverlayNode) -> None:
        if not 0 <= node.node_id < 1 << self.m:
            raise ValueError(f"node id {node.node_id} outside the {self.m}-bit ring")
        if node.node_id in self.nodes:
            raise IdCollision(f"node id {node.node_id} already present")
        self.nodes[node.node_id] = node
        insort(self._ids, node.node_id)
        if len(self._ids) == 1:
            node.routing = RoutingTable((node.node_id,), node.node_id, (node.node_id,) * self.m)
            self._rebuild_index()
            self._stable = True
        else:
            # Chord join: the newcomer learns its successor, everyone else is stale
            node.routing = RoutingTable((self.responsible(node.node_id + 1),), None, ())
            self._stable = False

    def join_many(self, nodes: Iterable[OverlayNode]) -> None:
        for node in nodes:
            self.join(node)

    def leave(self, node_id: int) -> OverlayNode:
        node = self.nodes.pop(node_id, None)
        if node is None:
            raise UnknownNode(node_id)
        del self._ids[bisect_left(self._ids, node_id)]
        self._stable = False
        if not self._ids:
            self._stable = True
        return node

    # --- ground truth ----------------------------------------------------

    def responsible(self, key: int) -> int:
        return responsible_node(self._ids, key % (1 << self.m))

    def replica_set(self, key: int, r: int) -> list[int]:
        if r > self.suc:
            raise NotEnoughNodes(f"r={r} exceeds successor list length suc={self.suc}")
        return replica_set(self._ids, key, r)

    def successor_indices(self, keys: Sequence[int]):
        """Index into ``ids`` of each key's primary owner (vectorized when compiled)."""
        if not self._ids:
            raise EmptyRing("no nodes in ring")
        kids = self._kids if self._stable and self._kids is not None else \
            self.kernels.prepare_ids(self._ids)
        return self.kernels.successor_indices(kids, keys)

    def holder_rows(self, keys: Sequence[int], k: int) -> list[tuple[int, ...]]:
        """Primary owner plus ``k - 1`` clockwise successors for each key."""
        kids = self._kids if self._stable and self._kids is not None else \
            self.kernels.prepare_ids(self._ids)
        return self.kernels.holder_rows(kids, self.successor_indices(keys), k)

    def index_of(self, node_id: int) -> int:
        self._require_stable()
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def _successor_list(self, idx: int) -> tuple[int, ...]:
        n = len(self._ids)
        if n == 1:
            return (self._ids[0],)
        count = max(1, min(self.suc, n - 1))
        return tuple(self._ids[(idx + j) % n] for j in range(1, count + 1))

    def _rebuild_index(self):
        self._index = {nid: i for i, nid in enumerate(self._ids)}
        self._kids = self.kernels.prepare_ids(self._ids)
        self._table = self.kernels.finger_table(self._kids, self.m)

    # --- stabilization ---------------------------------------------------

    def stabilize(self) -> int:
        """Refresh every routing table to ground truth.

        Returns the simulated message count: one notification per changed
        successor or predecessor entry, plus a lookup from the node for each
        distinct finger target that changed.  Per-node totals land in
        ``last_refresh``.
        """
        self.last_refresh = {}
        if not self._ids:
            return 0
        self._rebuild_index()
        ids = self._ids
        mask = (1 << self.m) - 1
        rows = self.kernels.finger_ids(self._kids, self._table)
        notify = {}
        jobs_origin, jobs_key, jobs_node = [], [], []
        for idx, nid in enumerate(ids):
            node = self.nodes[nid]
            old = node.routing
            fingers = rows[idx]
            new = RoutingTable(self._successor_list(idx), ids[idx - 1], fingers)
            if new == old:
                continue
            count = sum(1 for j, s in enumerate(new.successors)
                        if j >= len(old.successors) or old.successors[j] != s)
            count += old.predecessor != new.predecessor
            notify[nid] = count
            seen = set()
            for k, f in enumerate(fingers):
                if (k < len(old.fingers) and old.fingers[k] == f) or f in seen:
                    continue
                seen.add(f)
                jobs_origin.append(idx)
                jobs_key.append((nid + (1 << k)) & mask)
                jobs_node.append(nid)
            node.routing = new
        self._stable = True
        per_node = dict(notify)
        if jobs_origin:
            _, queries = self.kernels.lookup_many(self._kids, self._table, self.m,
                                                  jobs_origin, jobs_key)
            for nid, q in zip(jobs_node, queries):
                per_node[nid] += MESSAGES_PER_QUERY * int(q)
        self.last_refresh = per_node
        return sum(per_node.values())

    # --- routing ---------------------------------------------------------

    def _require_stable(self):
        if not self._stable:
            raise NotStabilized("ring membership changed since the last stabilize()")
        if not self._ids:
            raise EmptyRing("no nodes in ring")

    def lookup(self, origin: int, key: int) -> tuple[int, int]:
        """``(owner, hops)``; hops counts routing messages, 0 when origin owns key."""
        self._require_stable()
        try:
            idx = self._index[origin]
        except KeyError:
            raise UnknownNode(origin) from None
        owner, queries = self.kernels.lookup(self._kids, self._table, self.m, idx, key)
        return self._ids[owner], MESSAGES_PER_QUERY * int(queries)

    def lookup_many(self, origins: Sequence[int], keys: Sequence[int]) -> tuple[list[int], list[int]]:
        self._require_stable()
        try:
            idx = [self._index[o] for o in origins]
        except KeyError as exc:
            raise UnknownNode(exc.args[0]) from None
        owners, queries = self.kernels.lookup_many(self._kids, self._table, self.m, idx, keys)
        ids = self._ids
        return [ids[int(w)] for w in owners], [MESSAGES_PER_QUERY * int(q) for q in queries]

    # --- snapshot --------------------------------------------------------

    def snapshot(self) -> str:
        lines = [f"ring m={self.m} suc={self.suc} nodes={len(self._ids)} stable={int(self._stable)}"]
        for nid in self._ids:
            rt = self.nodes[nid].routing
            lines.append(
                f"node {nid} addr={self.nodes[nid].address} pred={rt.predecessor} "
                f"succ={','.join(map(str, rt.successors))} fingers={_compress(rt.fingers)}"
            )
        return "\n".join(lines) + "\n"
