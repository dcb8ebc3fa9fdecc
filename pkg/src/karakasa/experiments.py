"""Experiment drivers behind the command-line runner.

Every driver is deterministic in its arguments and returns ``ResultRow``
records in a fixed order; ``write_csv`` renders them.
"""
from __future__ import annotations

import csv
import io
import random
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, TextIO

from .adversary import random_plan, rewrite_campaign
from .chain import make_placement_chain, make_synthetic_chain
from .chord import DEFAULT_M
from .cluster import Cluster, block_key, bootstrap_cluster, grow_cluster, join_cluster, leave_cluster
from .errors import ConfigError, InvariantViolation
from .metrics import (
    ExperimentConfig,
    estimate_build_messages,
    estimate_karakasa_blocks,
    measure_storage,
    slope_through_origin,
)

CSV_HEADER = ("experiment", "n_nodes", "block_count", "replicas", "suc", "seed", "trial",
              "metric", "measured", "estimated", "unit")
CLUSTER_KEY = b"karakasa-experiment-key"


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    n_nodes: int
    block_count: int
    replicas: int | str
    suc: int
    seed: int
    trial: int | str
    metric: str
    measured: object
    estimated: object
    unit: str

    def fields(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in CSV_HEADER]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(rows: Iterable[ResultRow], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.fields())


def csv_text(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def node_addresses(count: int, seed: int, prefix: str = "node") -> list[str]:
    return [f"{prefix}-{seed}-{i}" for i in range(count)]


def build_cluster(chain, n_nodes: int, replicas: int, suc: int, seed: int, *,
                  m: int = DEFAULT_M, backend: str | None = None, keys=None) -> Cluster:
    """A stabilized cluster of ``n_nodes`` members holding ``chain``."""
    addrs = node_addresses(n_nodes, seed)
    cluster = bootstrap_cluster(addrs[0], chain, CLUSTER_KEY, replicas=replicas, suc=suc,
                                m=m, backend=backend, keys=keys)
    if n_nodes > 1:
        grow_cluster(cluster, addrs[1:], CLUSTER_KEY)
    return cluster


def _check(cluster: Cluster, chain_ids=None) -> None:
    problems = cluster.check_invariants(chain_ids)
    if problems:
        raise InvariantViolation("; ".join(problems[:5]))


def _chain(cfg: ExperimentConfig, count: int, txs_per_block: int = 2):
    if cfg.mode == "placement":
        return make_placement_chain(count, cfg.seed, cfg.block_size)
    return make_synthetic_chain(count, txs_per_block, cfg.seed, nominal_size=cfg.block_size)


def _storage_rows(experiment: str, cfg: ExperimentConfig, cluster: Cluster) -> list[ResultRow]:
    dist = measure_storage(cluster, cfg.block_size)
    est = estimate_karakasa_blocks(cfg)
    base = (experiment, cfg.n_nodes, cfg.block_count, cfg.replicas, cfg.suc, cfg.seed, 0)
    return [
        ResultRow(*base, "mean_blocks_per_node", dist.mean_exact, est, "blocks"),
        ResultRow(*base, "total_copies", dist.total, (cfg.replicas + 1) * cfg.block_count, "blocks"),
        ResultRow(*base, "stddev_blocks_per_node", dist.stddev, "", "blocks"),
        ResultRow(*base, "min_blocks_per_node", dist.min, "", "blocks"),
        ResultRow(*base, "max_blocks_per_node", dist.max, "", "blocks"),
        ResultRow(*base, "mean_bytes_per_node", dist.mean_exact * cfg.block_size,
                  est * cfg.block_size, "bytes"),
    ]


def exp_storage(nodes: Sequence[int], block_count: int = 512000, replicas: int = 0,
                seed: int = 0, *, mode: str = "placement", suc: int | None = None) -> list[ResultRow]:
    """Per-node storage as the cluster grows."""
    cfgs = [ExperimentConfig(block_count, n, replicas, suc, seed, mode) for n in nodes]
    if not cfgs:
        return []
    chain = _chain(cfgs[0], block_count)
    ids = [b.block_id for b in chain]
    keys = [block_key(b) for b in chain]
    rows = []
    for cfg in cfgs:
        cluster = build_cluster(chain, cfg.n_nodes, replicas, cfg.suc, seed, keys=keys)
        _check(cluster, ids)
        rows += _storage_rows("storage", cfg, cluster)
    return rows


def exp_replication(n_nodes: int = 1000, block_count: int = 50000, replicas: Sequence[int] = range(5),
                    seed: int = 0, *, mode: str = "placement", suc: int | None = None) -> list[ResultRow]:
    """Per-node storage as the replica count grows, plus a fit against R+1."""
    replicas = list(replicas)
    cfgs = [ExperimentConfig(block_count, n_nodes, r, suc, seed, mode) for r in replicas]
    if not cfgs:
        return []
    chain = _chain(cfgs[0], block_count)
    ids = [b.block_id for b in chain]
    keys = [block_key(b) for b in chain]
    rows, xs, ys = [], [], []
    for cfg in cfgs:
        cluster = build_cluster(chain, n_nodes, cfg.replicas, cfg.suc, seed, keys=keys)
        _check(cluster, ids)
        rows += _storage_rows("replication", cfg, cluster)
        xs.append(cfg.replicas + 1)
        ys.append(measure_storage(cluster).mean)
    slope = slope_through_origin(xs, ys)
    span = f"{replicas[0]}:{replicas[-1]}"
    rows.append(ResultRow("replication", n_nodes, block_count, span, max(c.suc for c in cfgs), seed,
                          "fit", "slope_vs_replicas_plus_1", slope,
                          Fraction(block_count, n_nodes), "blocks"))
    return rows


def exp_utxo_build(n_nodes: int = 1000, block_counts: Sequence[int] = range(1000, 5001, 1000),
                   trials: int = 10, seed: int = 0, *, replicas: int = 0, suc: int | None = None,
                   txs_per_block: int = 2) -> list[ResultRow]:
    """Messages a newcomer spends rebuilding its UTXO set.

    A cluster of ``n_nodes - 1`` members holds the chain; each trial admits
    a fresh node (making ``n_nodes``), records its rebuild cost and removes
    it again.
    """
    block_counts = list(block_counts)
    cfgs = [ExperimentConfig(c, n_nodes, replicas, suc, seed, "full") for c in block_counts]
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if n_nodes < 2:
        raise ConfigError("a UTXO rebuild needs at least one existing member and the joiner")
    if not cfgs:
        return []
    full_chain = make_synthetic_chain(max(block_counts), txs_per_block, seed)
    rows = []
    for cfg in cfgs:
        chain = full_chain[:cfg.block_count]
        ids = [b.block_id for b in chain]
        cluster = build_cluster(chain, n_nodes - 1, replicas, cfg.suc, seed)
        est = estimate_build_messages(cfg.block_count, n_nodes)
        reference = cluster.state(cluster.ring.ids[0]).utxoset
        for trial in range(trials):
            joiner = f"joiner-{seed}-{cfg.block_count}-{trial}"
            before = cluster.trace.hops, cluster.trace.transfers
            messages = join_cluster(cluster, joiner, CLUSTER_KEY)
            nid = next(n for n in cluster.ring.ids if cluster.ring.nodes[n].address == joiner)
            if cluster.state(nid).utxoset != reference:
                raise InvariantViolation(f"joiner UTXO set differs from genesis replay (trial {trial})")
            _check(cluster, ids)
            hops = cluster.trace.hops - before[0]
            transfers = cluster.trace.transfers - before[1]
            base = ("utxo-build", n_nodes, cfg.block_count, replicas, cfg.suc, seed, trial)
            rows.append(ResultRow(*base, "build_messages", messages, est, "messages"))
            rows.append(ResultRow(*base, "lookup_hops", hops, "", "messages"))
            rows.append(ResultRow(*base, "block_transfers", transfers, cfg.block_count, "messages"))
            leave_cluster(cluster, nid)
    return rows


def exp_attack(n_nodes: int = 16, replicas: int = 2, stack_depth: int = 4,
               fractions: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0), trials: int = 100,
               seed: int = 0, *, block_count: int | None = None, suc: int | None = None) -> list[ResultRow]:
    """Detection of transaction rewrites as the compromised fraction grows."""
    if block_count is None:
        block_count = stack_depth + 4
    cfg = ExperimentConfig(block_count, n_nodes, replicas, suc, seed, "full")
    if not 0 <= stack_depth < block_count:
        raise ConfigError(f"stack_depth must be in [0, block_count), got {stack_depth}")
    if trials < 1 or any(not 0 <= f <= 1 for f in fractions):
        raise ConfigError("trials must be >= 1 and fractions within [0, 1]")
    chain = make_synthetic_chain(block_count, 2, seed)
    base_cluster = build_cluster(chain, n_nodes, replicas, cfg.suc, seed)
    required = (replicas + 1) * (stack_depth + 1)
    rows = []
    for f in fractions:
        rng = random.Random(f"{seed}:{f!r}")
        reports = []
        for _ in range(trials):
            cluster = base_cluster.copy()
            plan = random_plan(cluster, f, stack_depth, rng)
            reports.append(rewrite_campaign(cluster, plan))
        tag = f"{f:.2f}"
        base = ("attack", n_nodes, block_count, replicas, cfg.suc, seed, "all")
        rows += [
            ResultRow(*base, f"detection_rate@{tag}",
                      Fraction(sum(r.detected for r in reports), trials), 1, "fraction"),
            ResultRow(*base, f"blocks_required@{tag}", reports[0].blocks_required, required, "copies"),
            ResultRow(*base, f"copies_held@{tag}",
                      statistics.fmean(r.copies_total for r in reports), required, "copies"),
            ResultRow(*base, f"copies_reached@{tag}",
                      statistics.fmean(r.copies_reached for r in reports), f * required, "copies"),
            ResultRow(*base, f"fully_consistent_rate@{tag}",
                      Fraction(sum(r.fully_consistent for r in reports), trials), "", "fraction"),
            ResultRow(*base, f"originals_recoverable_rate@{tag}",
                      Fraction(sum(r.originals_recoverable for r in reports), trials), "", "fraction"),
        ]
    return rows
