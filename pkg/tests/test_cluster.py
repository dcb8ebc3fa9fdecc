import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KEY, cached_chain, full_cluster, injected_cluster
from karakasa.chain import (
    Block,
    BlockHeader,
    Transaction,
    TxIn,
    TxOut,
    build_utxoset,
    coinbase_tx,
    make_placement_chain,
    make_synthetic_chain,
    mine_block,
    pow_ok,
)
from karakasa.chord import ring_id
from karakasa.cluster import (
    block_key,
    bootstrap_cluster,
    get_block,
    grow_cluster,
    join_cluster,
    leave_cluster,
    receive_new_block,
    resolve_fork,
    store_block,
)
from karakasa.errors import (
    AllReplicasCorrupt,
    BadPow,
    BadTx,
    IdCollision,
    InvalidChain,
    JoinRejected,
    MissingUtxo,
    NotEnoughNodes,
    NotFound,
    OrphanBranch,
    UnknownParent,
)


def tamper(cluster, node, bid):
    raw = bytearray(cluster.storage[node][bid])
    raw[-1] ^= 0xFF
    cluster.storage[node][bid] = bytes(raw)


def storage_image(cluster):
    return {n: dict(s) for n, s in cluster.storage.items()}


def extend(chain, txs=(), recipient=b"miner"):
    h = len(chain)
    return mine_block(chain[-1].block_id, [coinbase_tx(h, recipient, tag=b"x")] + list(txs))


def stub_with_key(key, m=8):
    i = 0
    while True:
        stub = make_placement_chain(1, seed=i)[0]
        if ring_id(stub.block_id, m) == key:
            return stub
        i += 1


# --- block keys ----------------------------------------------------------------

def test_block_key_deterministic(chain30):
    assert block_key(chain30[4]) == block_key(chain30[4]) == ring_id(chain30[4].block_id)


def test_consecutive_blocks_scatter():
    chain = make_placement_chain(20000, seed=3)
    cluster = bootstrap_cluster("n-0", chain, KEY)
    grow_cluster(cluster, [f"n-{i}" for i in range(1, 50)], KEY)
    owner = {bid: cluster.holders(bid)[0] for bid in cluster.block_ids}
    same = sum(owner[a.block_id] == owner[b.block_id] for a, b in zip(chain, chain[1:]))
    freq = same / (len(chain) - 1)
    # oracle: two independent keys share an owner with probability sum(arc^2)
    ids, space = cluster.ring.ids, 1 << 64
    arcs = [((ids[i] - ids[i - 1]) % space) / space for i in range(len(ids))]
    p = sum(a * a for a in arcs)
    sd = math.sqrt(p * (1 - p) / (len(chain) - 1))
    assert abs(freq - p) < 4 * sd
    assert 1 / 50 <= p < 4 / 50


def test_placement_mean_512_at_n1000():
    chain = make_placement_chain(512000, seed=0)
    cluster = bootstrap_cluster("n-0", chain, KEY)
    grow_cluster(cluster, [f"n-{i}" for i in range(1, 1000)], KEY)
    counts = [len(cluster.storage[n]) for n in cluster.ring.ids]
    assert sum(counts) == 512000 and sum(counts) / 1000 == 512


# --- bootstrap -----------------------------------------------------------------

def test_bootstrap_single_block():
    chain = make_synthetic_chain(1, 1, seed=2)
    cluster = bootstrap_cluster("init", chain, KEY)
    nid = cluster.ring.ids[0]
    assert list(cluster.storage[nid]) == [chain[0].block_id]
    cb = chain[0].txs[0]
    assert dict(cluster.state(nid).utxoset.items()) == {(cb.txid, 0): cb.outputs[0]}
    assert cluster.state(nid).tip == chain[0].block_id


def test_bootstrap_thousand_blocks():
    chain = list(cached_chain(1000, 2))
    cluster = bootstrap_cluster("init", chain, KEY)
    assert len(cluster.storage[cluster.ring.ids[0]]) == 1000 == cluster.copies()
    assert cluster.check_invariants([b.block_id for b in chain]) == []


def test_bootstrap_rejects_invalid_chain(chain30):
    with pytest.raises(InvalidChain):
        bootstrap_cluster("init", chain30[:3] + chain30[4:], KEY)


def test_bootstrap_then_accept_extension(chain30):
    cluster = bootstrap_cluster("init", chain30, KEY)
    nid = cluster.ring.ids[0]
    block = extend(chain30)
    rec = receive_new_block(cluster, nid, block)
    assert rec.status == "accepted" and rec.messages == 1
    assert cluster.state(nid).tip == block.block_id
    assert cluster.state(nid).utxoset == build_utxoset(chain30 + [block])


# --- join and leave --------------------------------------------------------------

def test_join_wrong_key_leaves_cluster_unchanged(chain30):
    cluster = full_cluster(5, chain30, replicas=1)
    before, snap = storage_image(cluster), cluster.snapshot()
    with pytest.raises(JoinRejected):
        join_cluster(cluster, "intruder", b"guess")
    with pytest.raises(JoinRejected):
        grow_cluster(cluster, ["intruder"], b"")
    assert storage_image(cluster) == before and cluster.snapshot() == snap


def test_join_id_collision(chain30):
    cluster = full_cluster(3, chain30)
    with pytest.raises(IdCollision):
        join_cluster(cluster, "node-1", KEY)


def test_join_single_node_cluster_rebuilds_utxo(chain30):
    cluster = bootstrap_cluster("init", chain30, KEY)
    messages = join_cluster(cluster, "second", KEY)
    init, second = (cluster.ring.nodes[n] for n in cluster.ring.ids)
    assert cluster.state(init.node_id).utxoset == cluster.state(second.node_id).utxoset
    assert cluster.state(second.node_id).utxoset == build_utxoset(chain30)
    assert messages >= len(chain30)
    assert cluster.check_invariants([b.block_id for b in chain30]) == []


def test_join_messages_are_hops_plus_one_per_block(chain30):
    cluster = full_cluster(40, chain30, replicas=2)
    messages = join_cluster(cluster, "joiner", KEY)
    nid = next(n for n in cluster.ring.ids if cluster.ring.nodes[n].address == "joiner")
    expected = sum(cluster.ring.lookup(nid, block_key(b))[1] + 1 for b in chain30)
    assert messages == expected


def test_leave_graceful_and_crash(chain30):
    ids = [b.block_id for b in chain30]
    cluster = full_cluster(8, chain30, replicas=1)
    leave_cluster(cluster, cluster.ring.ids[3])
    assert cluster.check_invariants(ids) == []
    leave_cluster(cluster, cluster.ring.ids[0], graceful=False)
    assert cluster.check_invariants(ids) == []  # one replica survives a single crash


def test_crash_without_replicas_loses_blocks(chain30):
    cluster = full_cluster(4, chain30, replicas=0)
    victim = max(cluster.ring.ids, key=lambda n: len(cluster.storage[n]))
    lost = set(cluster.storage[victim])
    leave_cluster(cluster, victim, graceful=False)
    assert lost and cluster.check_invariants([b.block_id for b in chain30])
    with pytest.raises(NotFound):
        get_block(cluster, cluster.ring.ids[0], next(iter(lost)))


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 3), st.lists(st.integers(0, 10**6), min_size=1, max_size=12))
def test_churn_keeps_placement_and_utxo(replicas, script):
    chain = list(cached_chain(12, 2, seed=4))
    ids = [b.block_id for b in chain]
    cluster = full_cluster(replicas + 2, chain, replicas=replicas)
    reference = build_utxoset(chain)
    for step, value in enumerate(script):
        if value % 3 and len(cluster.ring) > replicas + 1:
            leave_cluster(cluster, cluster.ring.ids[value % len(cluster.ring)])
        else:
            join_cluster(cluster, f"churn-{step}-{value}", KEY)
        assert cluster.check_invariants(ids) == []
        for n in cluster.ring.ids:
            assert cluster.state(n).utxoset == reference


# --- store and get -----------------------------------------------------------------

def test_store_single_node_r0():
    cluster = bootstrap_cluster("solo", make_placement_chain(1, 0), KEY)
    stub = make_placement_chain(2, 9)[1]
    assert store_block(cluster, stub) == 1
    assert stub.block_id in cluster.storage[cluster.ring.ids[0]]


def test_store_small_ring_replicas():
    stub = stub_with_key(55)
    cluster = injected_cluster([20, 70, 120, 250], [make_placement_chain(1, 1000)[0]], replicas=2)
    messages = store_block(cluster, stub, origin=20)
    assert set(cluster.holders(stub.block_id)) == {70, 120, 250}
    assert [n for n in (20, 70, 120, 250) if stub.block_id in cluster.storage[n]] == [70, 120, 250]
    assert messages == cluster.ring.lookup(20, 55)[1] + 3


def test_store_needs_enough_nodes():
    cluster = bootstrap_cluster("solo", make_placement_chain(3, 0), KEY, replicas=2)
    with pytest.raises(NotEnoughNodes):
        store_block(cluster, make_placement_chain(1, 5)[0])


def test_get_untampered(chain30):
    cluster = full_cluster(10, chain30, replicas=2)
    origin = cluster.ring.ids[0]
    for b in chain30:
        block, msgs = get_block(cluster, origin, b.block_id)
        assert block == b
        assert msgs == cluster.ring.lookup(origin, block_key(b))[1] + 1


def test_get_single_node_one_transfer(chain30):
    cluster = bootstrap_cluster("solo", chain30, KEY)
    block, msgs = get_block(cluster, cluster.ring.ids[0], chain30[7].block_id)
    assert block == chain30[7] and msgs == 1


def test_get_falls_back_past_tampered_primary(chain30):
    cluster = full_cluster(10, chain30, replicas=2)
    target = chain30[5]
    primary = cluster.holders(target.block_id)[0]
    tamper(cluster, primary, target.block_id)
    origin = cluster.ring.ids[-1]
    block, msgs = get_block(cluster, origin, target.block_id)
    assert block == target
    assert msgs == cluster.ring.lookup(origin, block_key(target))[1] + 2


def test_get_all_copies_tampered(chain30):
    cluster = full_cluster(10, chain30, replicas=2)
    target = chain30[5]
    for h in cluster.holders(target.block_id):
        tamper(cluster, h, target.block_id)
    with pytest.raises(AllReplicasCorrupt):
        get_block(cluster, cluster.ring.ids[0], target.block_id)


def test_get_unknown_id(chain30):
    cluster = full_cluster(4, chain30)
    with pytest.raises(NotFound):
        get_block(cluster, cluster.ring.ids[0], b"\x01" * 32)


# --- new blocks and forks ------------------------------------------------------------

def test_receive_fork_and_rejections(chain30):
    cluster = full_cluster(6, chain30, replicas=1)
    nid = cluster.ring.ids[2]
    sibling = mine_block(chain30[-2].block_id, [coinbase_tx(29, b"rival", tag=b"r")])
    rec = receive_new_block(cluster, nid, sibling)
    assert rec.status == "forked" and rec.resolution.outcome == "KeepCurrent"

    ghost = Transaction((TxIn(b"\x07" * 32, 0, b"w"),), (TxOut(1, b"w"),))
    rec = receive_new_block(cluster, nid, extend(chain30, [ghost]))
    assert rec.status == "rejected" and isinstance(rec.cause, BadTx)
    assert isinstance(rec.cause.cause, MissingUtxo)

    orphan = mine_block(b"\x09" * 32, [coinbase_tx(5, b"o")])
    rec = receive_new_block(cluster, nid, orphan)
    assert rec.status == "rejected" and isinstance(rec.cause, UnknownParent)

    block = extend(chain30)
    nonce = block.header.nonce + 1
    while pow_ok(BlockHeader(block.header.hash_prev_block, block.header.hash_merkle_root, 4, nonce)):
        nonce += 1
    weak = Block(BlockHeader(block.header.hash_prev_block, block.header.hash_merkle_root, 4, nonce), block.txs)
    rec = receive_new_block(cluster, nid, weak)
    assert rec.status == "rejected" and isinstance(rec.cause, BadPow)
    assert cluster.state(nid).tip == chain30[-1].block_id


def test_equal_work_branch_keeps_current(chain30):
    cluster = full_cluster(6, chain30)
    nid = cluster.ring.ids[0]
    alt = mine_block(chain30[-2].block_id, [coinbase_tx(29, b"alt", tag=b"a")])
    res = resolve_fork(cluster, nid, alt)
    assert not res.switched and res.outcome == "KeepCurrent"
    assert res.current_work == res.branch_work
    assert cluster.state(nid).tip == chain30[-1].block_id


def test_longer_branch_switches_and_replays(chain30):
    cluster = full_cluster(6, chain30)
    nid = cluster.ring.ids[1]
    a = mine_block(chain30[-2].block_id, [coinbase_tx(29, b"alt", tag=b"a")])
    b = mine_block(a.block_id, [coinbase_tx(30, b"alt", tag=b"b")])
    store_block(cluster, a, nid)
    rec = receive_new_block(cluster, nid, b)
    assert rec.status == "forked" and rec.resolution.outcome == "SwitchTo"
    new_chain = chain30[:-1] + [a, b]
    assert cluster.state(nid).tip == b.block_id
    assert cluster.state(nid).utxoset == build_utxoset(new_chain)
    assert cluster.state(nid).header_index == tuple(x.block_id for x in new_chain)


def test_orphan_branch():
    chain = list(cached_chain(5))
    cluster = full_cluster(3, chain)
    orphan = mine_block(b"\x05" * 32, [coinbase_tx(3, b"o")])
    with pytest.raises(OrphanBranch):
        resolve_fork(cluster, cluster.ring.ids[0], orphan)


def test_fork_ancestor_fetch_cost_at_n1000():
    chain = list(cached_chain(20))
    cluster = full_cluster(1000, chain)
    nid = cluster.ring.ids[123]
    branch, prev = [], chain[9].block_id
    for i in range(5):
        blk = mine_block(prev, [coinbase_tx(10 + i, b"fork", tag=b"f%d" % i)])
        branch.append(blk)
        prev = blk.block_id
    for blk in branch[:-1]:
        store_block(cluster, blk, cluster.ring.ids[0])
    res = resolve_fork(cluster, nid, branch[-1])
    assert len(res.branch) == 5 and not res.switched
    per_ancestor = res.messages / 4
    assert per_ancestor <= 2 * math.log2(1000) + 1


def test_snapshot_deterministic(chain30):
    assert full_cluster(5, chain30, 1).snapshot() == full_cluster(5, chain30, 1).snapshot()


def test_cluster_copy_is_independent(chain30):
    cluster = full_cluster(5, chain30, 1)
    twin = cluster.copy()
    tamper(twin, twin.holders(chain30[0].block_id)[0], chain30[0].block_id)
    assert get_block(cluster, cluster.ring.ids[0], chain30[0].block_id)[0] == chain30[0]
    assert storage_image(cluster) != storage_image(twin)
