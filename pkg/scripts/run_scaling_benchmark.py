#!/usr/bin/env python3
"""Epoch-runtime scaling study on synthetic corpora.

Mirrors `rag-importance bench` but prints the fitted slope per thread count
alongside the CSV, for quick linearity checks at larger sizes.
"""

import argparse
import os
import sys


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="500x100,5000x100,50000x100,100000x100",
                    help="comma list of NxB")
    ap.add_argument("--threads", default="1,2,4")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--eps", type=float, default=1e-3)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    threads = [int(t) for t in args.threads.split(",")]
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(max(threads + [os.cpu_count() or 1]))
    from rag_importance.bench import run_benchmark

    sizes = []
    for part in args.sizes.split(","):
        n, _, b = part.partition("x")
        sizes.append((int(n), int(b)))

    report = run_benchmark(sizes, threads, args.k, eps=args.eps,
                           repeats=args.repeats, seed=args.seed)
    sys.stdout.write(report.to_csv())
    for t, (slope, r2) in sorted(report.fits.items()):
        print(f"# threads={t}: slope {slope * 1e6:.2f} ns/point, R^2 {r2:.4f}")


if __name__ == "__main__":
    main()
