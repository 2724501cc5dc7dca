"""Compare the compiled kernels with the numpy fallback.

Run: ``python benchmarks/bench_kernels.py [--repeat 5]``.
"""
import argparse
import json
import timeit

import numpy as np

from superres import _kernels_py
from superres import kernels


def cases(rng):
    xi = rng.standard_normal((2000, 4096))
    za = 0.01 * rng.standard_normal((4096, 512))
    xb = -0.5 * np.full(512, 8 * np.pi / 512)
    return {
        "ou_recursion 2000x4096": (lambda m: m.ou_recursion(xi, 0.99, 0.4)),
        "su2_survival 4096x512": (lambda m: m.su2_survival(za, xb)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the fallback is timed")
    results = {}
    for name, fn in cases(rng).items():
        row = {}
        impls = {"python": _kernels_py}
        if kernels.BACKEND == "cython":
            from superres import _kernels
            impls["cython"] = _kernels
            diff = float(np.max(np.abs(fn(_kernels) - fn(_kernels_py))))
            row["max_abs_diff"] = diff
        for label, mod in impls.items():
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            row[label + "_s"] = t
        if "cython_s" in row:
            row["speedup"] = row["python_s"] / row["cython_s"]
        results[name] = row
        print(f"{name}: " + ", ".join(f"{k}={v:.4g}" for k, v in row.items()))
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
