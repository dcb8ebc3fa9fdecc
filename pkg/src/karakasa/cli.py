"""Command-line experiment runner.

    karakasa storage     --nodes 500:1000:100 --block-count 512000 --replicas 0
    karakasa replication --nodes 1000 --block-count 50000 --replicas 0:4
    karakasa utxo-build  --nodes 1000 --block-count 1000:5000:1000 --trials 10
    karakasa attack      --nodes 16 --replicas 2 --stack-depth 4 --trials 100

Exit status: 0 on success, 2 on a configuration error, 3 when a cluster
invariant is violated.
"""
from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from typing import Sequence

from .errors import ConfigError, InvalidParams, InvariantViolation
from .experiments import exp_attack, exp_replication, exp_storage, exp_utxo_build, write_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
SEED_ENV = "KARAKASA_SEED"


def parse_range(text: str) -> list[int]:
    """``n``, ``lo:hi`` (step 1) or ``lo:hi:step``; ``hi`` is inclusive."""
    parts = text.split(":")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad range {text!r}: expected n, lo:hi or lo:hi:step") from None
    if len(nums) == 1:
        return nums
    if len(nums) == 2:
        nums.append(1)
    if len(nums) != 3:
        raise ConfigError(f"bad range {text!r}: expected n, lo:hi or lo:hi:step")
    lo, hi, step = nums
    if step < 1 or hi < lo:
        raise ConfigError(f"bad range {text!r}: need lo <= hi and step >= 1")
    return list(range(lo, hi + 1, step))


def parse_single(text: str, name: str) -> int:
    values = parse_range(text)
    if len(values) != 1:
        raise ConfigError(f"{name} takes a single value here, got {text!r}")
    return values[0]


def parse_fractions(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad fraction list {text!r}") from None
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise ConfigError(f"fractions must lie in [0, 1], got {text!r}")
    return values


def resolve_seed(flag: int | None, environ=os.environ) -> int:
    if flag is not None:
        return flag
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="karakasa", description="KARAKASA storage-sharding experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, nodes, block_count, replicas, mode=True):
        p.add_argument("--nodes", default=nodes, help=f"cluster sizes (default {nodes})")
        p.add_argument("--block-count", default=block_count, help=f"blocks (default {block_count})")
        p.add_argument("--replicas", default=replicas, help=f"replica count(s) (default {replicas})")
        p.add_argument("--suc", type=int, default=None, help="successor-list length")
        p.add_argument("--seed", type=int, default=None, help=f"RNG seed (overrides ${SEED_ENV})")
        p.add_argument("--out", default="-", help="CSV path, '-' for stdout (default)")
        if mode:
            p.add_argument("--mode", choices=("placement", "full"), default="placement")
        return p

    common(sub.add_parser("storage", help="per-node storage as N grows"), "500:1000:100", "512000", "0")
    common(sub.add_parser("replication", help="per-node storage as R grows"), "1000", "50000", "0:4")
    p = common(sub.add_parser("utxo-build", help="messages to rebuild a UTXO set"),
               "1000", "1000:5000:1000", "0", mode=False)
    p.add_argument("--trials", type=int, default=10)
    p = common(sub.add_parser("attack", help="transaction-rewrite detection"), "16", None, "2", mode=False)
    p.add_argument("--stack-depth", type=int, default=4)
    p.add_argument("--fractions", default="0,0.25,0.5,0.75,1")
    p.add_argument("--trials", type=int, default=100)
    return parser


def run(args: argparse.Namespace):
    seed = resolve_seed(args.seed)
    if args.command == "storage":
        return exp_storage(parse_range(args.nodes), parse_single(args.block_count, "--block-count"),
                           parse_single(args.replicas, "--replicas"), seed, mode=args.mode, suc=args.suc)
    if args.command == "replication":
        return exp_replication(parse_single(args.nodes, "--nodes"),
                               parse_single(args.block_count, "--block-count"),
                               parse_range(args.replicas), seed, mode=args.mode, suc=args.suc)
    if args.command == "utxo-build":
        return exp_utxo_build(parse_single(args.nodes, "--nodes"), parse_range(args.block_count),
                              args.trials, seed, replicas=parse_single(args.replicas, "--replicas"),
                              suc=args.suc)
    if args.command == "attack":
        block_count = None if args.block_count is None else parse_single(args.block_count, "--block-count")
        return exp_attack(parse_single(args.nodes, "--nodes"), parse_single(args.replicas, "--replicas"),
                          args.stack_depth, parse_fractions(args.fractions), args.trials, seed,
                          block_count=block_count, suc=args.suc)
    raise ConfigError(f"unknown command {args.command!r}")


def summary_table(rows) -> str:
    lines = [f"{'experiment':<12} {'N':>6} {'blocks':>8} {'R':>5} {'trial':>5} {'metric':<34} "
             f"{'measured':>16} {'estimated':>16} {'rel.err':>8}"]
    for r in rows:
        if r.estimated == "" or r.unit == "bytes":
            continue
        measured, estimated = float(Fraction(r.measured)), float(Fraction(r.estimated))
        err = f"{abs(measured - estimated) / abs(estimated):.4f}" if estimated else "-"
        lines.append(f"{r.experiment:<12} {r.n_nodes:>6} {r.block_count:>8} {str(r.replicas):>5} "
                     f"{str(r.trial):>5} {r.metric:<34} {measured:>16.3f} {estimated:>16.3f} {err:>8}")
    return "\n".join(lines) + "\n"


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rows = run(args)
    except (ConfigError, InvalidParams) as exc:
        print(f"karakasa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"karakasa: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    if args.out == "-":
        write_csv(rows, sys.stdout)
        sys.stderr.write(summary_table(rows))
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
        sys.stdout.write(summary_table(rows))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
