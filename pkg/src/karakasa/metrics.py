"""Closed-form storage and message estimators, and the measured counterparts.

Estimators use exact rational arithmetic and report bytes.  One MB is
10**6 bytes.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .chain import BLOCK_SIZE, HEADER_SIZE
from .cluster import Cluster, MessageTrace
from .errors import ConfigError

MB = 10**6
MODES = ("placement", "full")


@dataclass(frozen=True)
class ExperimentConfig:
    block_count: int
    n_nodes: int
    replicas: int = 0
    suc: int | None = None
    seed: int = 0
    mode: str = "placement"
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.suc is None:
            object.__setattr__(self, "suc", default_suc_for(self.replicas, self.n_nodes))
        self.validate()

    def validate(self) -> None:
        if self.block_count < 1:
            raise ConfigError(f"block_count must be >= 1, got {self.block_count}")
        if self.n_nodes < 1:
            raise ConfigError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.replicas < 0:
            raise ConfigError(f"replicas must be >= 0, got {self.replicas}")
        if self.suc < 0 or self.suc > self.n_nodes - 1:
            raise ConfigError(f"suc={self.suc} exceeds n_nodes-1={self.n_nodes - 1}")
        if self.replicas > self.suc:
            raise ConfigError(f"replicas={self.replicas} exceeds suc={self.suc}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


def default_suc_for(replicas: int, n_nodes: int) -> int:
    """Successor-list length: at least 8 and at least R, capped at N-1."""
    return max(0, min(max(replicas, 8), n_nodes - 1))


# --- estimators ------------------------------------------------------------

def estimate_full_node(cfg: ExperimentConfig) -> int:
    return cfg.block_count * cfg.block_size


def estimate_karakasa(cfg: ExperimentConfig) -> Fraction:
    """Bytes per node: BlockCount * BlockSize * (R+1) / N."""
    return Fraction(cfg.block_count * cfg.block_size * (cfg.replicas + 1), cfg.n_nodes)


def estimate_karakasa_blocks(cfg: ExperimentConfig) -> Fraction:
    return Fraction(cfg.block_count * (cfg.replicas + 1), cfg.n_nodes)


def estimate_spv(block_count: int, header_size: int = HEADER_SIZE) -> int:
    return block_count * header_size


def spv_crossover(block_size: int = BLOCK_SIZE, header_size: int = HEADER_SIZE) -> int:
    """Cluster size beyond which a node's block share is smaller than an SPV node's headers.

    Per node the cluster keeps BlockCount*BlockSize/N bytes against
    BlockCount*header bytes for SPV; the ratio is independent of BlockCount.
    """
    return block_size // header_size


def estimate_build_messages(block_count: int, n_nodes: int) -> float:
    """Messages to rebuild a UTXO set: one lookup plus one transfer per block."""
    return block_count * (math.log2(n_nodes) + 1) if n_nodes > 1 else float(block_count)


# --- measurements ----------------------------------------------------------

@dataclass(frozen=True)
class StorageDistribution:
    counts: tuple[int, ...]
    block_size: int = BLOCK_SIZE

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def mean(self) -> float:
        return self.total / len(self.counts)

    @property
    def mean_exact(self) -> Fraction:
        return Fraction(self.total, len(self.counts))

    @property
    def stddev(self) -> float:
        return statistics.pstdev(self.counts) if len(self.counts) > 1 else 0.0

    @property
    def min(self) -> int:
        return min(self.counts)

    @property
    def max(self) -> int:
        return max(self.counts)

    @property
    def bytes(self) -> tuple[int, ...]:
        return tuple(c * self.block_size for c in self.counts)


def measure_storage(cluster: Cluster, block_size: int = BLOCK_SIZE) -> StorageDistribution:
    return StorageDistribution(tuple(len(cluster.storage[n]) for n in cluster.ring.ids), block_size)


@dataclass(frozen=True)
class MessageTotals:
    hops: int
    transfers: int
    stabilize: int
    repair: int

    @property
    def total(self) -> int:
        return self.hops + self.transfers + self.stabilize + self.repair


def measure_messages(trace: MessageTrace) -> MessageTotals:
    return MessageTotals(trace.hops, trace.transfers, trace.stabilize, trace.repair)


# --- regression helpers ----------------------------------------------------

def slope_through_origin(xs: Sequence[float], ys: Sequence[float]) -> float:
    num = sum(x * y for x, y in zip(xs, ys))
    den = sum(x * x for x in xs)
    return num / den


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares ``(slope, intercept, r_squared)``."""
    fit = statistics.linear_regression(xs, ys)
    mean_y = statistics.fmean(ys)
    ss_tot = sum((y - mean_y) ** 2 for y in ys)
    ss_res = sum((y - (fit.slope * x + fit.intercept)) ** 2 for x, y in zip(xs, ys))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return fit.slope, fit.intercept, r2


def relative_error(measured: float, estimated: float) -> float:
    return abs(measured - estimated) / abs(estimated)
