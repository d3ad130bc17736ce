"""Benchmark the jitted kernels against the pure-Python fallback.

Run directly for the current mode, or with --both to spawn a subprocess
with RFOSR_DISABLE_NUMBA=1 and print a side-by-side comparison:

    python3 benchmarks/bench_kernels.py --both
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _problem(n=600, d=16, c=3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.normal(0, 1, (n, d)))
    y = rng.integers(0, c, n).astype(np.int64)
    mult = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.int64)
    return X, y, mult, c


def _time(fn, repeats=5):
    fn()  # warm up (JIT compile in numba mode)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmarks():
    from rfosr import kernels

    X, y, mult, c = _problem()
    results = {"numba": kernels.NUMBA_ENABLED}

    def grow():
        return kernels.grow_tree(X, y, mult, c, 4, kernels.GINI,
                                 kernels.NO_DEPTH_LIMIT, 1, 42)

    results["grow_tree"] = _time(grow)
    feat, thr, left, right, counts, _ = grow()

    results["apply_tree"] = _time(
        lambda: kernels.apply_tree(feat, thr, left, right, X))

    leaf_ids = kernels.apply_tree(feat, thr, left, right, X)
    P = np.zeros((X.shape[0], X.shape[0]))
    results["proximity_accumulate"] = _time(
        lambda: kernels.proximity_accumulate(leaf_ids, mult, P))

    rng = np.random.default_rng(1)
    nb_d = np.sort(rng.random((400, 600)), axis=1)
    nb_l = rng.integers(0, c, (400, 600)).astype(np.int64)
    results["ratio_scan"] = _time(lambda: kernels.ratio_scan(nb_l, nb_d, 5, c))
    results["nn_ratio_scan"] = _time(lambda: kernels.nn_ratio_scan(nb_l, nb_d))
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--both", action="store_true",
                        help="also run the pure-Python path in a subprocess")
    parser.add_argument("--json", action="store_true",
                        help="emit machine-readable results")
    args = parser.parse_args()

    results = run_benchmarks()
    if args.json:
        print(json.dumps(results))
        return

    mode = "numba" if results["numba"] else "pure python"
    print(f"kernel timings ({mode}), best of 5, seconds:")
    for name, val in results.items():
        if name != "numba":
            print(f"  {name:22s} {val:10.6f}")

    if args.both and results["numba"]:
        env = dict(os.environ, RFOSR_DISABLE_NUMBA="1")
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--json"],
            capture_output=True, text=True, env=env, check=True)
        pure = json.loads(out.stdout)
        print("\nside by side (numba vs pure python):")
        print(f"  {'kernel':22s} {'numba':>10s} {'pure':>12s} {'speedup':>9s}")
        for name in results:
            if name == "numba":
                continue
            ratio = pure[name] / results[name]
            print(f"  {name:22s} {results[name]:10.6f} {pure[name]:12.6f} "
                  f"{ratio:8.1f}x")


if __name__ == "__main__":
    main()
