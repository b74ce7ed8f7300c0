"""Compare the compiled and numpy kernel backends.

Times the pairwise-distance kernel, the single-query boundary walk and the
batched per-row HE kernel at a few dictionary sizes, checks that both
backends agree, and prints a CSV table to stdout.

    python benchmarks/bench_backends.py [--queries 256] [--sizes 1024,8192]
"""

import argparse
import csv
import sys
import time

import numpy as np

from heml import kernels


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=256)
    ap.add_argument("--positives", type=int, default=15)
    ap.add_argument("--sizes", default="1024,4096,8192")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the numpy fallback only", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    w = csv.writer(sys.stdout)
    w.writerow(["kernel", "dict_size", "backend", "seconds", "speedup_vs_python"])

    for size in (int(s) for s in args.sizes.split(",")):
        queries = rng.normal(size=(args.queries, args.dim))
        keys = rng.normal(size=(size, args.dim))
        roles = np.full((args.queries, size), -1, dtype=np.int8)
        for i in range(args.queries):
            roles[i, rng.choice(size, args.positives, replace=False)] = 1
        dist = kernels.pairwise_euclidean(queries, keys, "python")
        pos = np.sort(dist[0, roles[0] == 1])
        neg = np.sort(dist[0, roles[0] == -1])

        cases = {
            "pairwise_euclidean": lambda b: kernels.pairwise_euclidean(queries, keys, b),
            "boundary_walk": lambda b: kernels.boundary_walk(pos, neg, b),
            "he_rows": lambda b: kernels.he_rows(dist, roles, b, threads=1),
        }
        for name, fn in cases.items():
            ref = fn("python")
            timings = {}
            for b in backends:
                out = fn(b)
                for x, y in zip(np.atleast_1d(ref) if name != "he_rows" else ref,
                                np.atleast_1d(out) if name != "he_rows" else out):
                    if not np.allclose(x, y, rtol=0, atol=1e-9):
                        raise SystemExit(f"{name}: backends disagree at dict size {size}")
                timings[b] = best_of(lambda: fn(b), args.repeats)
            for b, t in timings.items():
                w.writerow([name, size, b, f"{t:.6g}", f"{timings['python'] / t:.2f}"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
