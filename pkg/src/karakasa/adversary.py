"""Storage-rewriting attacker.

The attacker controls a set of cluster nodes and edits the block copies they
hold.  It cannot change the id other nodes look a block up by, so a tampered
copy either fails the hash check or, when every copy of every affected block
was rewritten and re-linked, surfaces as a competing branch that honest fork
choice rejects.  Routing-layer misbehaviour is out of scope.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .chain import Block, BlockStub, Transaction, mine_block, parse_tx
from .cluster import Cluster, get_block, resolve_fork, store_block
from .errors import (AllReplicasCorrupt, ChainError, ClusterError, DecodeError, NoCopyHeld,
                     NotFound, TargetNotFound)

Mutation = Callable[[bytes], bytes]


@dataclass(frozen=True)
class ByteEdit:
    """XOR ``xor`` into the byte at ``offset``; out-of-range offsets change nothing."""

    offset: int
    xor: int = 0x01

    def __call__(self, data: bytes) -> bytes:
        if not 0 <= self.offset < len(data) or self.xor & 0xFF == 0:
            return bytes(data)
        out = bytearray(data)
        out[self.offset] ^= self.xor & 0xFF
        return bytes(out)


def identity(data: bytes) -> bytes:
    return bytes(data)


def amount_edit(tx: Transaction, out_index: int = 0, xor: int = 0x01) -> ByteEdit:
    """Edit touching the low byte of output ``out_index``'s amount in ``tx``'s serialization."""
    if not 0 <= out_index < len(tx.outputs):
        raise IndexError(f"transaction has {len(tx.outputs)} outputs")
    offset = 2
    for txin in tx.inputs:
        offset += 32 + 4 + 2 + len(txin.unlocking_script)
    offset += 2
    for out in tx.outputs[:out_index]:
        offset += 8 + 2 + len(out.locking_script)
    return ByteEdit(offset, xor)


def tamper_block(cluster: Cluster, node: int, block_id: bytes, mutation: Mutation) -> None:
    """Mutate ``node``'s stored bytes for ``block_id`` in place; the storage key is unchanged."""
    shard = cluster.storage.get(node)
    if shard is None or block_id not in shard:
        raise NoCopyHeld(f"node {node} holds no copy of {block_id.hex()[:16]}")
    payload = shard[block_id]
    if isinstance(payload, BlockStub):
        raise ValueError("placement-only copies carry no bytes to tamper with")
    shard[block_id] = mutation(payload)


@dataclass(frozen=True)
class AttackPlan:
    target_tx: tuple[int, int]          # (block height, tx position)
    compromised_nodes: frozenset[int]
    mutation: Mutation = identity

    def __post_init__(self):
        object.__setattr__(self, "compromised_nodes", frozenset(self.compromised_nodes))


@dataclass
class CampaignReport:
    target_height: int
    stack_depth: int                 # S: blocks stacked on the target
    replicas: int
    blocks_required: int             # (R+1)(S+1): target block included
    stacked_required: int            # (R+1)S: stacked blocks only
    copies_total: int                # copies actually held for the affected blocks
    copies_reached: int
    copies_rewritten: int
    fully_consistent: bool
    detected: bool
    detection: str                   # "none" | "hash-check" | "fork-choice"
    originals_recoverable: bool
    copies_flagged: int
    verifier: int | None = None
    rewritten_ids: tuple[bytes, ...] = field(default=(), repr=False)

    CSV_FIELDS = ("target_height", "stack_depth", "replicas", "blocks_required",
                  "stacked_required", "copies_total", "copies_reached", "copies_rewritten",
                  "fully_consistent", "detected", "detection", "originals_recoverable",
                  "copies_flagged")

    def csv_row(self) -> list[str]:
        out = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            out.append(str(int(v)) if isinstance(v, bool) else str(v))
        return out


def blocks_required(replicas: int, stack_depth: int) -> int:
    return (replicas + 1) * (stack_depth + 1)


def _rewrite_branch(chain: list[Block], target_height: int, tx_pos: int, mutation: Mutation) -> list[Block] | None:
    """Re-mine the target block and every block stacked on it; None when the edit does not parse."""
    target = chain[target_height]
    try:
        new_tx = parse_tx(mutation(target.txs[tx_pos].serialized))
    except DecodeError:
        return None
    if new_tx == target.txs[tx_pos]:
        return list(chain[target_height:])
    txs = list(target.txs)
    txs[tx_pos] = new_tx
    prev = target.header.hash_prev_block
    out = []
    for h in range(target_height, len(chain)):
        src = chain[h]
        block = mine_block(prev, txs if h == target_height else src.txs,
                           src.header.bits, src.nominal_size)
        out.append(block)
        prev = block.block_id
    return out


def rewrite_campaign(cluster: Cluster, plan: AttackPlan) -> CampaignReport:
    """Rewrite a transaction and re-link every block after it, as far as the compromised set reaches."""
    if not cluster.full_content:
        raise ValueError("rewrite campaigns need a full-content cluster")
    unknown = plan.compromised_nodes - set(cluster.ring.ids)
    if unknown:
        raise ValueError(f"compromised nodes not in cluster: {sorted(unknown)}")
    honest = [n for n in cluster.ring.ids if n not in plan.compromised_nodes]
    verifier = honest[0] if honest else cluster.ring.ids[0]
    state = cluster.state(verifier)
    height, pos = plan.target_tx
    if not 0 <= height <= state.height:
        raise TargetNotFound(f"no block at height {height}")
    ids = state.header_index
    chain = []
    for bid in ids:
        try:
            block, _ = get_block(cluster, verifier, bid)
        except ClusterError as exc:
            raise TargetNotFound(f"block {bid.hex()[:16]} unavailable: {exc}") from exc
        chain.append(block)
    if not 0 <= pos < len(chain[height].txs):
        raise TargetNotFound(f"block {height} has no transaction {pos}")

    stack = state.height - height
    affected = ids[height:]
    copies_total = sum(len(cluster.holders(b)) for b in affected)
    reach = [(b, h) for b in affected for h in cluster.holders(b) if h in plan.compromised_nodes]
    report = CampaignReport(height, stack, cluster.replicas, blocks_required(cluster.replicas, stack),
                            (cluster.replicas + 1) * stack, copies_total, len(reach), 0, False,
                            True, "none", True, 0, verifier)
    if not reach:
        return report

    branch = _rewrite_branch(chain, height, pos, plan.mutation)
    if branch is None:
        for bid, node in reach:
            tamper_block(cluster, node, bid, plan.mutation if bid == ids[height] else identity)
    else:
        new_bytes = {old: b.serialized for old, b in zip(affected, branch)}
        for bid, node in reach:
            tamper_block(cluster, node, bid, lambda _data, s=new_bytes[bid]: s)
    report.copies_rewritten = sum(
        1 for bid, node in reach
        if cluster.storage[node][bid] != chain[ids.index(bid)].serialized)
    report.fully_consistent = branch is not None and len(reach) == copies_total \
        and report.copies_rewritten > 0

    # honest audit of every copy by its original id
    flagged = 0
    for bid in affected:
        for h in cluster.holders(bid):
            if not cluster._copy_ok(bid, cluster.storage[h][bid]):
                flagged += 1
    report.copies_flagged = flagged
    recoverable = True
    for i, bid in enumerate(affected):
        try:
            block, _ = get_block(cluster, verifier, bid)
        except (AllReplicasCorrupt, NotFound):
            recoverable = False
            continue
        recoverable &= block.serialized == chain[height + i].serialized
    report.originals_recoverable = recoverable

    if report.copies_rewritten == 0:
        return report  # identity edit: nothing changed
    if report.fully_consistent:
        report.rewritten_ids = tuple(b.block_id for b in branch)
        for b in branch:
            if b.block_id not in cluster._keys:
                store_block(cluster, b, verifier)
        try:
            res = resolve_fork(cluster, verifier, branch[-1])
            report.detected = not res.switched
        except (ChainError, ClusterError):
            report.detected = True
        report.detection = "fork-choice"
    else:
        report.detected = flagged > 0
        report.detection = "hash-check"
    return report


def random_plan(cluster: Cluster, fraction: float, stack_depth: int, rng: random.Random,
                tx_pos: int = 0) -> AttackPlan:
    """Uniformly compromise ``round(fraction * N)`` nodes and target the block ``stack_depth`` below the tip."""
    nodes = list(cluster.ring.ids)
    k = round(fraction * len(nodes))
    compromised = frozenset(rng.sample(nodes, k))
    state = cluster.state(nodes[0])
    height = state.height - stack_depth
    tx = None
    if 0 <= height:
        # the target transaction's first output amount
        block, _ = get_block(cluster, nodes[0], state.header_index[height])
        tx = block.txs[tx_pos]
    mutation = amount_edit(tx) if tx is not None else identity
    return AttackPlan((height, tx_pos), compromised, mutation)


def honest_fetches_ok(cluster: Cluster, originals: Iterable[Block], requesters: Iterable[int]) -> bool:
    """True when every requester gets every original block back by id."""
    originals = list(originals)
    for r in requesters:
        for b in originals:
            try:
                got, _ = get_block(cluster, r, b.block_id)
            except (AllReplicasCorrupt, NotFound):
                return False
            if got.serialized != b.serialized:
                return False
    return True
