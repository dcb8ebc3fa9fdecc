"""Block storage sharded over a Chord ring.

Each block is stored under ``block_key`` on its primary owner and the next
``replicas`` nodes clockwise.  Full-content clusters store serialized block
bytes and every fetch is checked against the requested id; placement-only
clusters store ``BlockStub`` records and only support placement and
accounting.
"""
from __future__ import annotations

import hmac
from dataclasses import dataclass
from typing import Iterable, Sequence

from .chain import (
    Block,
    BlockHeader,
    BlockStub,
    UtxoSet,
    _apply_inplace,
    apply_block,
    block_work,
    build_utxoset,
    parse_block,
    verify_block_standalone,
    verify_chain,
    verify_header_chain,
)
from .chord import DEFAULT_M, OverlayNode, Ring, ring_id
from .errors import (
    AllReplicasCorrupt,
    BlockError,
    BrokenLink,
    ChainError,
    DecodeError,
    InvalidChain,
    JoinRejected,
    NotEnoughNodes,
    NotFound,
    OrphanBranch,
    UnknownNode,
    UnknownParent,
)

TRANSFER_MESSAGES = 1


def block_key(block: Block | BlockStub, m: int = DEFAULT_M) -> int:
    return ring_id(block.block_id, m)


def default_suc(replicas: int) -> int:
    return max(replicas, 8)


@dataclass(frozen=True)
class NodeState:
    """A node's local view: UTXO set plus the lightweight header chain."""

    utxoset: UtxoSet
    headers: tuple[BlockHeader, ...]
    header_index: tuple[bytes, ...]

    @classmethod
    def from_headers(cls, utxoset: UtxoSet, headers: Sequence[BlockHeader]) -> "NodeState":
        headers = tuple(headers)
        return cls(utxoset, headers, tuple(h.block_id for h in headers))

    @property
    def tip(self) -> bytes:
        return self.header_index[-1]

    @property
    def height(self) -> int:
        return len(self.header_index) - 1

    def height_of(self, block_id: bytes) -> int | None:
        pos = self.__dict__.get("_pos")
        if pos is None:
            pos = {bid: h for h, bid in enumerate(self.header_index)}
            object.__setattr__(self, "_pos", pos)
        return pos.get(block_id)


@dataclass
class MessageTrace:
    hops: int = 0        # routing messages
    transfers: int = 0   # block fetches and stores
    stabilize: int = 0   # routing-table refresh
    repair: int = 0      # block copies moved by re-placement

    @property
    def total(self) -> int:
        return self.hops + self.transfers + self.stabilize + self.repair


class Cluster:
    def __init__(self, ring: Ring, replicas: int, cluster_key: bytes, *, full_content: bool = True):
        self.ring = ring
        self.replicas = replicas
        self.cluster_key = bytes(cluster_key)
        self.full_content = full_content
        self.storage: dict[int, dict[bytes, bytes | BlockStub]] = {}
        self.states: dict[int, NodeState | None] = {}
        self.trace = MessageTrace()
        self._keys: dict[bytes, int] = {}          # every block id the cluster stores -> ring key
        self._holders: dict[bytes, tuple[int, ...]] = {}

    @property
    def m(self) -> int:
        return self.ring.m

    @property
    def node_ids(self) -> list[int]:
        return list(self.ring.ids)

    @property
    def block_ids(self) -> list[bytes]:
        return list(self._keys)

    def holders(self, block_id: bytes) -> tuple[int, ...]:
        return self._holders.get(block_id, ())

    def copies(self) -> int:
        return sum(len(s) for s in self.storage.values())

    def state(self, node_id: int) -> NodeState:
        try:
            st = self.states[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None
        if st is None:
            raise ValueError("placement-only clusters keep no node state")
        return st

    # --- placement -------------------------------------------------------

    def _payload(self, block) -> bytes | BlockStub:
        return block.serialized if isinstance(block, Block) else block

    def _copy_ok(self, block_id: bytes, payload) -> bool:
        if isinstance(payload, BlockStub):
            return payload.block_id == block_id
        try:
            block = parse_block(payload)
        except DecodeError:
            return False
        return block.block_id == block_id and block.merkle_ok()

    def placement(self, block_ids: Sequence[bytes]) -> list[tuple[int, ...]]:
        """Ground-truth holder tuples; under-replicated while the ring is smaller than R+1."""
        k = min(self.replicas + 1, len(self.ring))
        keys = self._keys
        return self.ring.holder_rows([keys[b] for b in block_ids], k)

    def _placement_all(self) -> list[tuple[int, ...]]:
        # keys only ever get appended, so the prepared key vector is reused until one is added
        k = min(self.replicas + 1, len(self.ring))
        cached = self.__dict__.get("_key_vec")
        if cached is None or cached[0] != len(self._keys) or cached[2] != self.ring.kernels.NAME:
            vec = self.ring.kernels.prepare_ids(list(self._keys.values()))
            cached = (len(self._keys), vec, self.ring.kernels.NAME)
            self._key_vec = cached
        return self.ring.holder_rows(cached[1], k)

    def rebalance(self, extra_sources: dict[int, dict] | None = None) -> int:
        """Move copies so each block sits exactly on its holder tuple. Returns copies made."""
        bids = list(self._keys)
        if not bids:
            return 0
        made = 0
        for bid, new in zip(bids, self._placement_all()):
            old = self._holders.get(bid, ())
            if new == old:
                continue
            stores = [self.storage.get(h) or (extra_sources or {}).get(h) for h in old]
            copies = [s[bid] for s in stores if s and bid in s]
            if not copies:
                self._holders[bid] = ()
                continue  # lost: every holder crashed
            src = next((c for c in copies if self._copy_ok(bid, c)), copies[0])
            for h in new:
                if h not in old:
                    self.storage[h][bid] = src
                    made += 1
            for h in old:
                if h not in new and h in self.storage:
                    self.storage[h].pop(bid, None)
            self._holders[bid] = new
        self.trace.repair += made * TRANSFER_MESSAGES
        return made

    def settle(self, extra_sources=None) -> int:
        """Stabilize the ring and re-place replicas eagerly."""
        msgs = self.ring.stabilize()
        self.trace.stabilize += msgs
        self.rebalance(extra_sources)
        return msgs

    def _register(self, block) -> tuple[int, ...]:
        bid = block.block_id
        if bid not in self._keys:
            self._keys[bid] = ring_id(bid, self.m)
        (holders,) = self.placement([bid])
        payload = self._payload(block)
        for h in holders:
            self.storage[h][bid] = payload
        for h in self._holders.get(bid, ()):
            if h not in holders and h in self.storage:
                self.storage[h].pop(bid, None)
        self._holders[bid] = holders
        return holders

    # --- integrity -------------------------------------------------------

    def check_invariants(self, chain_ids: Iterable[bytes] | None = None) -> list[str]:
        """Violations of shard completeness and replica placement; empty when healthy.

        Every stored copy must sit on one of its block's ground-truth holders
        and the copy total must equal min(R+1, N) per block; together these
        pin every block to exactly its holder tuple.
        """
        problems = []
        bids = list(self._keys)
        truth = dict(zip(bids, self._placement_all())) if bids and len(self.ring) else {}
        total = 0
        for nid, shard in self.storage.items():
            if nid not in self.ring:
                problems.append(f"storage kept for departed node {nid}")
            total += len(shard)
            for bid in shard:
                t = truth.get(bid)
                if t is None or nid not in t:
                    problems.append(f"node {nid} holds {bid.hex()[:12]} outside its holder set")
        expected_total = sum(len(t) for t in truth.values())
        if total != expected_total:
            problems.append(f"total copies {total} != {expected_total}")
            held = {bid for shard in self.storage.values() for bid in shard}
            for bid in bids:
                if bid not in held:
                    problems.append(f"block {bid.hex()[:12]} has no copy")
        if chain_ids is not None:
            want = set(chain_ids)
            if want != set(bids):
                problems.append(f"cluster tracks {len(bids)} ids, chain has {len(want)}")
        return problems

    def snapshot(self) -> str:
        lines = [f"cluster nodes={len(self.ring)} replicas={self.replicas} "
                 f"blocks={len(self._keys)} copies={self.copies()}"]
        for nid in self.ring.ids:
            st = self.states.get(nid)
            tip = st.tip.hex() if st else "-"
            lines.append(f"node {nid} blocks={len(self.storage.get(nid, ()))} tip={tip}")
        return "\n".join(lines) + "\n"

    def copy(self) -> "Cluster":
        import copy
        return copy.deepcopy(self)


# --- lifecycle -------------------------------------------------------------

def _as_node(node: OverlayNode | str, m: int) -> OverlayNode:
    return OverlayNode.from_address(node, m) if isinstance(node, str) else node


def bootstrap_cluster(initial_node: OverlayNode | str, chain: Sequence[Block | BlockStub],
                      key: bytes, *, replicas: int = 0, suc: int | None = None,
                      m: int = DEFAULT_M, backend: str | None = None,
                      keys: Sequence[int] | None = None) -> Cluster:
    """Single-node cluster whose initial node stores and replays the whole chain.

    ``keys`` may carry precomputed ring keys (``block_key`` of each block) so
    repeated experiments over one chain hash it only once.
    """
    full = bool(chain) and isinstance(chain[0], Block)
    if any(isinstance(b, Block) != full for b in chain):
        raise InvalidChain("chain mixes full blocks and placement stubs")
    state = None
    if full:
        try:
            verify_chain(chain)
        except ChainError as exc:
            raise InvalidChain(str(exc)) from exc
        state = NodeState.from_headers(build_utxoset(chain), [b.header for b in chain])
    ring = Ring(m, default_suc(replicas) if suc is None else suc, backend)
    if replicas > ring.suc:
        raise ValueError(f"replicas={replicas} exceeds suc={ring.suc}")
    node = _as_node(initial_node, m)
    ring.join(node)
    cluster = Cluster(ring, replicas, key, full_content=full)
    cluster.storage[node.node_id] = {}
    cluster.states[node.node_id] = state
    nid = node.node_id
    shard = cluster.storage[nid]
    if keys is None:
        keys = [ring_id(b.block_id, m) for b in chain]
    elif len(keys) != len(chain):
        raise ValueError("keys must match the chain block for block")
    holders = (nid,)
    for block, key in zip(chain, keys):
        bid = block.block_id
        cluster._keys[bid] = key
        cluster._holders[bid] = holders
        shard[bid] = cluster._payload(block)
    return cluster


def grow_cluster(cluster: Cluster, nodes: Iterable[OverlayNode | str], presented_key: bytes) -> int:
    """Admit many nodes at once for experiment set-up.

    Each newcomer is key-checked and handed a copy of an existing member's
    verified state instead of replaying the chain itself; ``join_cluster`` is
    the single-node path that pays the replay cost.  One stabilization covers
    the whole batch.  Returns the stabilization message count.
    """
    _check_key(cluster, presented_key)
    nodes = [_as_node(n, cluster.m) for n in nodes]
    template = cluster.states[cluster.ring.ids[0]]
    for node in nodes:
        cluster.ring.join(node)
        cluster.storage[node.node_id] = {}
        cluster.states[node.node_id] = template
    return cluster.settle()


def _check_key(cluster: Cluster, presented_key: bytes) -> None:
    if not hmac.compare_digest(bytes(presented_key), cluster.cluster_key):
        raise JoinRejected("cluster key mismatch")


def join_cluster(cluster: Cluster, new_node: OverlayNode | str, presented_key: bytes) -> int:
    """Admit one node and rebuild its UTXO set from the cluster.

    The newcomer takes the header chain from its successor, then fetches
    every block in height order.  Returns the messages spent on that rebuild:
    the sum over blocks of lookup hops plus one transfer per fetch.
    """
    _check_key(cluster, presented_key)
    node = _as_node(new_node, cluster.m)
    contact = cluster.ring.responsible(node.node_id) if len(cluster.ring) else None
    cluster.ring.join(node)
    nid = node.node_id
    cluster.storage[nid] = {}
    cluster.states[nid] = None
    cluster.settle()
    if not cluster.full_content or contact is None:
        return 0
    headers = cluster.state(contact).headers
    verify_header_chain(headers)
    entries: dict = {}
    messages = 0
    for height, header in enumerate(headers):
        block, msgs = get_block(cluster, nid, header.block_id)
        messages += msgs
        _apply_inplace(entries, block, height)
    utxo = UtxoSet()
    utxo._entries = entries
    cluster.states[nid] = NodeState.from_headers(utxo, headers)
    return messages


def leave_cluster(cluster: Cluster, node_id: int, *, graceful: bool = True) -> None:
    """Remove a node. A graceful leave hands its copies over; a crash loses them."""
    cluster.ring.leave(node_id)
    departed = cluster.storage.pop(node_id, {})
    cluster.states.pop(node_id, None)
    cluster.settle({node_id: departed} if graceful else None)


# --- storage operations ----------------------------------------------------

def store_block(cluster: Cluster, block: Block | BlockStub, origin: int | None = None) -> int:
    """Place ``block`` on its holders; returns lookup hops plus one transfer per copy."""
    if len(cluster.ring) < cluster.replicas + 1:
        raise NotEnoughNodes(f"{cluster.replicas} replicas need {cluster.replicas + 1} nodes, "
                             f"cluster has {len(cluster.ring)}")
    if origin is None:
        origin = cluster.ring.ids[0]
    key = ring_id(block.block_id, cluster.m)
    _, hops = cluster.ring.lookup(origin, key)
    holders = cluster._register(block)
    transfers = len(holders) * TRANSFER_MESSAGES
    cluster.trace.hops += hops
    cluster.trace.transfers += transfers
    return hops + transfers


def get_block(cluster: Cluster, requester: int, block_id: bytes) -> tuple[Block | BlockStub, int]:
    """Fetch by id, falling back along the replica list until a copy verifies.

    A copy verifies when its header hashes to ``block_id`` and its Merkle
    root matches its transactions.
    """
    key = ring_id(block_id, cluster.m)
    owner, hops = cluster.ring.lookup(requester, key)
    cluster.trace.hops += hops
    messages = hops
    ids = cluster.ring.ids
    n = len(ids)
    start = cluster.ring.index_of(owner)
    seen_copy = False
    for j in range(min(cluster.replicas + 1, n)):
        holder = ids[(start + j) % n]
        messages += TRANSFER_MESSAGES
        cluster.trace.transfers += TRANSFER_MESSAGES
        payload = cluster.storage.get(holder, {}).get(block_id)
        if payload is None:
            continue
        seen_copy = True
        if isinstance(payload, BlockStub):
            if payload.block_id == block_id:
                return payload, messages
            continue
        try:
            block = parse_block(payload)
        except DecodeError:
            continue
        if block.block_id == block_id and block.merkle_ok():
            return block, messages
    if seen_copy:
        raise AllReplicasCorrupt(f"every copy of {block_id.hex()[:16]} fails the hash check")
    raise NotFound(block_id.hex())


# --- new blocks and forks --------------------------------------------------

@dataclass
class ForkResolution:
    switched: bool
    fork_height: int
    branch: tuple[Block, ...]
    current_work: int
    branch_work: int
    messages: int

    @property
    def outcome(self) -> str:
        return "SwitchTo" if self.switched else "KeepCurrent"


@dataclass
class Reception:
    status: str  # "accepted" | "forked" | "rejected"
    cause: BlockError | None = None
    resolution: ForkResolution | None = None
    messages: int = 0


def receive_new_block(cluster: Cluster, node_id: int, block: Block) -> Reception:
    state = cluster.state(node_id)
    prev = block.header.hash_prev_block
    height = state.height + 1
    if prev == state.tip:
        try:
            verify_block_standalone(block, height)
            utxo = apply_block(state.utxoset, block, height)
        except BlockError as exc:
            return Reception("rejected", cause=exc)
        messages = store_block(cluster, block, node_id)
        cluster.states[node_id] = NodeState(utxo, state.headers + (block.header,),
                                            state.header_index + (block.block_id,))
        return Reception("accepted", messages=messages)
    parent_height = state.height_of(prev)
    if parent_height is None:
        try:
            get_block(cluster, node_id, prev)
        except (NotFound, AllReplicasCorrupt):
            return Reception("rejected", cause=UnknownParent(height, "parent not found locally or in cluster"))
    try:
        res = resolve_fork(cluster, node_id, block)
    except (ChainError, OrphanBranch) as exc:
        cause = exc if isinstance(exc, BlockError) else UnknownParent(height, str(exc))
        return Reception("rejected", cause=cause)
    return Reception("forked", resolution=res, messages=res.messages)


def resolve_fork(cluster: Cluster, node_id: int, branch_tip: Block) -> ForkResolution:
    """Walk the branch back to the local chain and keep whichever side has more work.

    Ties keep the current branch.  On a switch the UTXO set is replayed from
    genesis with blocks fetched from the cluster.
    """
    state = cluster.state(node_id)
    branch = [branch_tip]
    messages = 0
    cur = branch_tip
    while state.height_of(cur.header.hash_prev_block) is None:
        if len(branch) > len(state.header_index):
            raise OrphanBranch("branch ancestry never meets the local chain")
        try:
            cur, msgs = get_block(cluster, node_id, cur.header.hash_prev_block)
        except NotFound:
            raise OrphanBranch("branch ancestor missing from the cluster") from None
        messages += msgs
        branch.append(cur)
    branch.reverse()
    fork_height = state.height_of(branch[0].header.hash_prev_block)
    for i, b in enumerate(branch):
        h = fork_height + 1 + i
        if i and b.header.hash_prev_block != branch[i - 1].block_id:
            raise BrokenLink(h)
        verify_block_standalone(b, h)
    current_work = sum(block_work(hd.bits) for hd in state.headers[fork_height + 1:])
    branch_work = sum(block_work(b.header.bits) for b in branch)
    res = ForkResolution(False, fork_height, tuple(branch), current_work, branch_work, messages)
    if branch_work <= current_work:
        return res
    entries: dict = {}
    for h in range(fork_height + 1):
        block, msgs = get_block(cluster, node_id, state.header_index[h])
        messages += msgs
        _apply_inplace(entries, block, h)
    for i, b in enumerate(branch):
        _apply_inplace(entries, b, fork_height + 1 + i)
    for b in branch:
        if b.block_id not in cluster._keys:
            messages += store_block(cluster, b, node_id)
    utxo = UtxoSet()
    utxo._entries = entries
    headers = state.headers[:fork_height + 1] + tuple(b.header for b in branch)
    cluster.states[node_id] = NodeState.from_headers(utxo, headers)
    res.switched = True
    res.messages = messages
    return res
