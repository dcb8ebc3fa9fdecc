"""Compare the compiled routing kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py --nodes 1024 --lookups 10000
"""
import argparse
import random
import timeit

from karakasa import _kernels
from karakasa.chord import OverlayNode, Ring


def make_ring(n, backend):
    ring = Ring(backend=backend)
    ring.join_many(OverlayNode.from_address(f"bench-{i}") for i in range(n))
    ring.stabilize()
    return ring


def bench(backend, nodes, lookups, repeat):
    kernels = _kernels.select(64, backend)
    ring = make_ring(nodes, backend)
    rng = random.Random(1)
    origins = [rng.choice(ring.ids) for _ in range(lookups)]
    keys = [rng.getrandbits(64) for _ in range(lookups)]
    prepared = kernels.prepare_ids(ring.ids)
    cases = {
        "finger_table": lambda: kernels.finger_table(prepared, 64),
        "successor_indices": lambda: ring.successor_indices(keys),
        "lookup_many": lambda: ring.lookup_many(origins, keys),
        "stabilize_from_scratch": lambda: make_ring(nodes, backend),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=1024)
    parser.add_argument("--lookups", type=int, default=10_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    backends = _kernels.available()
    results = {b: bench(b, args.nodes, args.lookups, args.repeat) for b in backends}
    print(f"N={args.nodes} lookups={args.lookups} (best of {args.repeat}, seconds)")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in results["python"]:
        line = f"{name:<24}" + "".join(f"{results[b][name]:>12.4f}" for b in backends)
        if "cython" in results:
            line += f"{results['python'][name] / results['cython'][name]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
