import functools

import pytest

from karakasa.chain import make_synthetic_chain
from karakasa.chord import OverlayNode
from karakasa.cluster import bootstrap_cluster, grow_cluster

KEY = b"test-cluster-key"


@functools.lru_cache(maxsize=None)
def cached_chain(count, txs=3, seed=7):
    return tuple(make_synthetic_chain(count, txs, seed))


def full_cluster(n_nodes, chain, replicas=0, *, m=64, suc=None, prefix="node"):
    chain = list(chain)
    cluster = bootstrap_cluster(f"{prefix}-0", chain, KEY, replicas=replicas, suc=suc, m=m)
    if n_nodes > 1:
        grow_cluster(cluster, [f"{prefix}-{i}" for i in range(1, n_nodes)], KEY)
    return cluster


def injected_cluster(ids, chain, replicas=0, *, m=8, suc=None):
    chain = list(chain)
    cluster = bootstrap_cluster(OverlayNode(f"n{ids[0]}", ids[0]), chain, KEY,
                                replicas=replicas, suc=suc, m=m)
    grow_cluster(cluster, [OverlayNode(f"n{i}", i) for i in ids[1:]], KEY)
    return cluster


@pytest.fixture
def chain30():
    return list(cached_chain(30))


_RESULTS = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "acceptance" in report.keywords:
        _RESULTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
