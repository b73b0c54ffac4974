"""Time the compiled kernels against the pure-Python fallback.

Run ``python3 benchmarks/bench_kernels.py [--rows N] [--repeats R]``.
"""
import argparse
import time

import numpy as np

from uavids import _backend
from uavids.explain import tree_shap_single
from uavids.tree import TreeParams, grow_gradient_tree, grow_tree


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--features", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.features))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(np.int64) + (X[:, 2] > 1)
    w = np.ones(args.rows)
    g, h = rng.normal(size=args.rows), np.full(args.rows, 0.25)
    shap_tree = grow_tree(X, y, w, 3, TreeParams(max_depth=8), rng=0)

    cases = {
        "grow_tree (best splits)": lambda: grow_tree(X, y, w, 3, TreeParams(), rng=0),
        "grow_tree (random splits)": lambda: grow_tree(X, y, w, 3, TreeParams(split_mode="random"), rng=0),
        "grow_gradient_tree": lambda: grow_gradient_tree(X, g, h, params=TreeParams(max_depth=6), rng=0),
        "apply (all rows)": lambda: shap_tree.apply(X),
        "tree_shap (100 rows)": lambda: [tree_shap_single(shap_tree, X[i]) for i in range(100)],
    }
    backends = ["python"] + (["cython"] if _backend.has_compiled() else [])
    prev = _backend.name()
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    try:
        for label, fn in cases.items():
            times = []
            for b in backends:
                _backend.use(b)
                times.append(_best(fn, args.repeats))
            speed = f"{times[0] / times[1]:10.1f}x" if len(times) == 2 else ""
            print(f"{label:28s}" + "".join(f"{t:11.4f}s" for t in times) + speed)
    finally:
        _backend.use(prev)
    if len(backends) == 1:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
