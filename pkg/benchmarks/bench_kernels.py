"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Prints the best-of-``repeat`` wall time per kernel and backend and the
speed-up of the compiled version.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from iss_smallgain import _pykernels

try:
    from iss_smallgain import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None


def _cases(rng):
    n = 8
    A = rng.uniform(0, 0.2, (n, n))
    np.fill_diagonal(A, 0)
    is_max = (np.arange(n) % 2).astype(np.int32)
    d = np.full(n, 1.1)
    S = rng.uniform(0, 10, (20_000, n))
    yield "mixed_linear_apply (20000 x 8)", "mixed_linear_apply", (A, is_max, d, S)

    G = np.array([[0, 0, 0.9], [0.9, 0, 0.9], [0, 0.9, 0]])
    rk = (np.ones(3), G, np.array([0, 1, 1], dtype=np.int32), np.array([[1.0], [0.0], [1.0]]),
          np.zeros(1, dtype=np.int32), np.array([[1.0, 0.0, 0.0]]), np.ones(3), 1e-3, 60_000)
    yield "rk4_network (3 states, 60000 steps)", "rk4_network", rk


def run(repeat: int):
    rng = np.random.default_rng(0)
    rows = []
    for label, name, args in _cases(rng):
        row = {"kernel": label}
        for backend, mod in (("python", _pykernels), ("cython", _ckernels)):
            if mod is None:
                row[backend] = None
                continue
            fn = getattr(mod, name)
            number = 1 if name == "rk4_network" and backend == "python" else 3
            t = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number
            row[backend] = t
        if row["cython"]:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'kernel':40s} {'python [s]':>12s} {'cython [s]':>12s} {'speed-up':>9s}")
    for r in rows:
        cy = "n/a" if r["cython"] is None else f"{r['cython']:.5f}"
        sp = f"{r['speedup']:.1f}x" if "speedup" in r else "n/a"
        print(f"{r['kernel']:40s} {r['python']:12.5f} {cy:>12s} {sp:>9s}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
