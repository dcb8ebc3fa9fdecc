import math
import random
from bisect import bisect_left

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from karakasa import _kernels
from karakasa.chord import (
    MESSAGES_PER_QUERY,
    STABILIZE_C,
    OverlayNode,
    Ring,
    in_half_open,
    replica_set,
    responsible_node,
    ring_id,
)
from karakasa.errors import BadM, EmptyRing, IdCollision, NotEnoughNodes, NotStabilized, UnknownNode

SMALL_RING = (20, 70, 120, 250)


def scan_successor(ids, key, m):
    # linear clockwise scan, independent of bisect-based code paths
    space = 1 << m
    best, best_dist = None, None
    for n in ids:
        d = (n - key) % space
        if best_dist is None or d < best_dist:
            best, best_dist = n, d
    return best


def make_ring(ids, m=8, suc=3, backend=None):
    ring = Ring(m=m, suc=suc, backend=backend)
    for n in ids:
        ring.join(OverlayNode(f"n{n}", n))
    ring.stabilize()
    return ring


def random_ring(n, seed, m=64, backend=None, suc=8):
    rng = random.Random(seed)
    ids = set()
    while len(ids) < n:
        ids.add(rng.getrandbits(m))
    return make_ring(sorted(ids), m=m, suc=suc, backend=backend), rng


BACKENDS = _kernels.available()


# --- ring_id -----------------------------------------------------------------

def test_ring_id_deterministic_and_bounded():
    assert ring_id(b"10.0.0.1") == ring_id(b"10.0.0.1")
    for m in (16, 32, 64, 160):
        assert 0 <= ring_id(b"x", m) < 1 << m
    assert ring_id(b"x", 8) == ring_id(b"x", 64) >> 56


@pytest.mark.parametrize("m", [0, 161, -3])
def test_ring_id_bad_m(m):
    with pytest.raises(BadM):
        ring_id(b"x", m)
    with pytest.raises(BadM):
        Ring(m=m)


def test_ring_id_uniform_at_m8():
    rng = random.Random(11)
    counts = [0] * 256
    for _ in range(10**4):
        counts[ring_id(rng.randbytes(16), 8)] += 1
    assert all(counts)
    assert chisquare(counts).pvalue > 0.01


def test_no_collisions_at_m64():
    ids = {ring_id(i.to_bytes(8, "little")) for i in range(200_000)}
    assert len(ids) == 200_000


def test_collision_is_hard_error():
    ring = Ring(m=8)
    ring.join(OverlayNode("a", 5))
    with pytest.raises(IdCollision):
        ring.join(OverlayNode("b", 5))


def test_address_hashes_to_id():
    node = OverlayNode.from_address("192.0.2.7")
    assert node.node_id == ring_id(b"192.0.2.7")


# --- responsibility and replicas --------------------------------------------

def test_small_ring_responsible_and_replicas():
    assert responsible_node(SMALL_RING, 55) == 70
    assert replica_set(SMALL_RING, 55, 2) == [70, 120, 250]
    assert replica_set(SMALL_RING, 55, 0) == [70]
    assert replica_set([20, 120, 250], 55, 0) == [120]


def test_responsible_edges():
    assert responsible_node([42], 7) == 42
    assert responsible_node(SMALL_RING, 70) == 70
    assert responsible_node(SMALL_RING, 251) == 20
    assert responsible_node(SMALL_RING, 0) == 20
    with pytest.raises(EmptyRing):
        responsible_node([], 1)


def test_replica_set_needs_nodes():
    with pytest.raises(NotEnoughNodes):
        replica_set(SMALL_RING, 55, 4)
    ring = make_ring(SMALL_RING, suc=1)
    with pytest.raises(NotEnoughNodes):
        ring.replica_set(55, 2)


@given(st.sets(st.integers(0, 255), min_size=1, max_size=40), st.integers(0, 255), st.data())
def test_replica_set_distinct_and_ordered(ids, key, data):
    ids = sorted(ids)
    r = data.draw(st.integers(0, len(ids) - 1))
    reps = replica_set(ids, key, r)
    assert len(reps) == r + 1 == len(set(reps))
    assert reps[0] == scan_successor(ids, key, 8)
    for a, b in zip(reps, reps[1:]):
        assert b == ids[(ids.index(a) + 1) % len(ids)]


@given(st.sets(st.integers(0, 255), min_size=1, max_size=30))
def test_ownership_partitions_circle(ids):
    ids = sorted(ids)
    owners = {}
    for key in range(256):
        owner = responsible_node(ids, key)
        assert owner == scan_successor(ids, key, 8)
        prev = ids[ids.index(owner) - 1]
        assert len(ids) == 1 or in_half_open(key, prev, owner)
        owners.setdefault(owner, 0)
        owners[owner] += 1
    assert sum(owners.values()) == 256
    assert set(owners) <= set(ids)


# --- routing tables ----------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_fingers_match_bruteforce(backend):
    ring, _ = random_ring(200, seed=3, m=32, backend=backend)
    for nid in ring.ids:
        rt = ring.nodes[nid].routing
        assert len(rt.fingers) == 32
        for k, f in enumerate(rt.fingers):
            assert f == scan_successor(ring.ids, (nid + (1 << k)) % (1 << 32), 32)
        assert rt.fingers[0] == rt.successors[0]
        i = ring.ids.index(nid)
        assert rt.predecessor == ring.ids[i - 1]
        assert list(rt.successors) == [ring.ids[(i + j) % 200] for j in range(1, 9)]


def test_single_node_is_own_neighbour():
    ring = Ring(m=8)
    ring.join(OverlayNode("solo", 9))
    rt = ring.nodes[9].routing
    assert rt.successors == (9,) and rt.predecessor == 9
    assert ring.lookup(9, 200) == (9, 0)
    ring.stabilize()
    assert ring.lookup(9, 3) == (9, 0)


def test_stabilize_idempotent():
    ring, _ = random_ring(128, seed=5)
    snap = ring.snapshot()
    assert ring.stabilize() == 0
    assert ring.snapshot() == snap


def test_snapshot_deterministic():
    a, _ = random_ring(16, seed=9)
    b, _ = random_ring(16, seed=9)
    assert a.snapshot() == b.snapshot()
    assert a.snapshot().startswith("ring m=64 suc=8 nodes=16 stable=1\n")


@pytest.mark.parametrize("seed", range(10))
def test_stabilize_cost_after_single_join(seed):
    ring, rng = random_ring(256, seed=seed)
    ring.join(OverlayNode("new", rng.getrandbits(64)))
    total = ring.stabilize()
    bound = STABILIZE_C * math.log2(257) ** 2
    assert total == sum(ring.last_refresh.values()) > 0
    assert max(ring.last_refresh.values()) <= bound


def test_lookup_before_stabilize_raises():
    ring = make_ring(SMALL_RING)
    ring.join(OverlayNode("late", 90))
    with pytest.raises(NotStabilized):
        ring.lookup(20, 55)
    ring.stabilize()
    assert ring.lookup(20, 85)[0] == 90


def test_unknown_origin_and_leave():
    ring = make_ring(SMALL_RING)
    with pytest.raises(UnknownNode):
        ring.lookup(21, 55)
    with pytest.raises(UnknownNode):
        ring.leave(21)


# --- lookup -------------------------------------------------------------------

def test_small_ring_lookup_and_departure():
    ring = make_ring(SMALL_RING)
    for origin in SMALL_RING:
        assert ring.lookup(origin, 55)[0] == 70
    assert ring.replica_set(55, 2) == [70, 120, 250]
    assert ring.lookup(70, 55) == (70, 0)
    ring.leave(70)
    ring.stabilize()
    for origin in (20, 120, 250):
        assert ring.lookup(origin, 55)[0] == 120


@pytest.mark.parametrize("backend", BACKENDS)
def test_lookup_matches_scan_1024(backend):
    ring, rng = random_ring(1024, seed=17, backend=backend)
    origins = [rng.choice(ring.ids) for _ in range(10**4)]
    keys = [rng.getrandbits(64) for _ in range(10**4)]
    owners, hops = ring.lookup_many(origins, keys)
    ids = ring.ids
    for key, owner in zip(keys, owners):
        i = bisect_left(ids, key)
        assert owner == ids[i % len(ids)]
    for key, owner in list(zip(keys, owners))[:300]:
        assert owner == scan_successor(ids, key, 64)
    mean = sum(hops) / len(hops)
    assert 0.25 * 10 <= mean <= 1.5 * 10
    assert all(h % MESSAGES_PER_QUERY == 0 for h in hops)


def test_backends_agree():
    if "cython" not in BACKENDS:
        pytest.skip("compiled kernels not built")
    py, rng = random_ring(300, seed=23, backend="python")
    cy, _ = random_ring(300, seed=23, backend="cython")
    assert py.snapshot() == cy.snapshot()
    origins = [rng.choice(py.ids) for _ in range(3000)]
    keys = [rng.getrandbits(64) for _ in range(3000)]
    assert py.lookup_many(origins, keys) == cy.lookup_many(origins, keys)
    assert [py.lookup(o, k) for o, k in zip(origins[:50], keys[:50])] == \
        [cy.lookup(o, k) for o, k in zip(origins[:50], keys[:50])]


def test_wide_ring_uses_python_kernels():
    ring, rng = random_ring(64, seed=2, m=160)
    assert ring.kernels is _kernels.python
    key = rng.getrandbits(160)
    assert ring.lookup(ring.ids[0], key)[0] == scan_successor(ring.ids, key, 160)


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 2**16 - 1), min_size=1, max_size=60), st.data())
def test_lookup_owner_property(ids, data):
    ring = make_ring(sorted(ids), m=16)
    origin = data.draw(st.sampled_from(ring.ids))
    key = data.draw(st.integers(0, 2**16 - 1))
    owner, hops = ring.lookup(origin, key)
    assert owner == scan_successor(ring.ids, key, 16)
    assert hops >= 0
    if owner == origin:
        assert hops == 0


# --- churn ---------------------------------------------------------------------

def test_join_splits_exactly_one_interval():
    ring, rng = random_ring(100, seed=31, m=16)
    before = {k: ring.responsible(k) for k in range(1 << 16)}
    new = rng.getrandbits(16)
    while new in ring:
        new = rng.getrandbits(16)
    ring.join(OverlayNode("new", new))
    ring.stabilize()
    after = {k: ring.responsible(k) for k in range(1 << 16)}
    changed = [k for k in before if before[k] != after[k]]
    assert changed and all(after[k] == new for k in changed)
    assert {before[k] for k in changed} == {ring.ids[(ring.ids.index(new) + 1) % 101]}
    # the moved keys form one contiguous arc ending at the new node
    pred = ring.ids[ring.ids.index(new) - 1]
    assert set(changed) == {k for k in range(1 << 16) if in_half_open(k, pred, new)}


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 1023)), min_size=1, max_size=40))
def test_random_churn_keeps_tables_true(events):
    ring = make_ring([3, 500, 900], m=10, suc=2)
    for is_join, value in events:
        if is_join and value not in ring:
            ring.join(OverlayNode(f"n{value}", value))
        elif not is_join and len(ring) > 1:
            ring.leave(ring.ids[value % len(ring)])
        ring.stabilize()
        ids = ring.ids
        for nid in ids:
            rt = ring.nodes[nid].routing
            assert rt.fingers == tuple(scan_successor(ids, (nid + (1 << k)) % 1024, 10) for k in range(10))
        assert ring.stabilize() == 0
