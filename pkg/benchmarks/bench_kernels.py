"""Time the numpy and compiled kernel backends on the same inputs.

    python benchmarks/bench_kernels.py --sizes 1000 10000 100000 --out bench.csv

Prints one row per (kernel, size, backend) with the best-of-``repeat`` time
and the speedup of each backend over the numpy fallback.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from probsurv import kernels


def _inputs(n, rng, n_grid=200):
    risk = rng.normal(size=n)
    times = rng.integers(1, max(2, n // 4), n).astype(float)
    events = (rng.uniform(size=n) < 0.7).astype(float)
    grid = np.unique(times[events == 1])[:n_grid]
    col = np.searchsorted(grid, times, side="right") - 1
    surv = np.exp(-np.outer(np.exp(risk), np.linspace(0.01, 2.0, grid.size)))
    return risk, times, events, col, surv


def _cases(n, rng):
    risk, times, events, col, surv = _inputs(n, rng)
    yield "cox_loglik_grad", n, lambda impl: kernels.cox_loglik_grad(risk, times, events, impl=impl)
    yield "breslow", n, lambda impl: kernels.breslow_increments(risk, times, events, impl=impl)
    # concordance is quadratic in N, so it is timed on a smaller cohort
    m = min(n, 5000)
    yield "concordance", m, lambda impl: kernels.concordance_counts(times[:m], events[:m], col[:m], surv[:m], impl=impl)


def run(sizes, repeat, seed):
    backends = kernels.available_backends()
    rows = []
    for n in sizes:
        for name, size, fn in _cases(n, np.random.default_rng(seed)):
            base = None
            for label, impl in backends.items():
                fn(impl)  # warm up
                number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(impl), number=1), 1e-7)))
                best = min(timeit.repeat(lambda: fn(impl), number=number, repeat=repeat)) / number
                base = best if label == "python" else base
                rows.append({"kernel": name, "n": size, "backend": label, "seconds": best, "speedup": base / best})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write CSV here instead of stdout")
    args = ap.parse_args(argv)
    if "cython" not in kernels.available_backends():
        print("compiled backend not built; timing the numpy fallback only", file=sys.stderr)
    rows = run(args.sizes, args.repeat, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, ["kernel", "n", "backend", "seconds", "speedup"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "seconds": f"{r['seconds']:.3e}", "speedup": f"{r['speedup']:.2f}"})
    finally:
        if args.out:
            fh.close()


if __name__ == "__main__":
    main()
