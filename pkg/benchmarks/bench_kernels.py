"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--reps 20]
"""
import argparse
import time

import numpy as np

from hoikit import kernels


def best_of(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    for n in (256, 1024, 4096):
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        yield f"chamfer n={n}", lambda be, a=a, b=b: kernels.chamfer(a, b, backend=be)
        yield f"nearest n={n}", lambda be, a=a, b=b: kernels.nearest_sqdist(a, b, backend=be)
    w, h = 96, 72
    for n in (200, 1000):
        z = rng.uniform(1, 5, n)
        args = (rng.uniform(0, w, n), rng.uniform(0, h, n), np.sort(z)[::-1].copy(),
                rng.uniform(0.5, 4, n), rng.uniform(0.2, 1, n), rng.uniform(size=(n, 3)))
        yield f"composite {w}x{h} splats={n}", lambda be, args=args: kernels.composite(*args, w, 0, h, backend=be)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    names = list(kernels.backends())
    if "cython" not in names:
        print("compiled extension not available; timing numpy only")
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(a.seed)):
        t = {be: best_of(lambda: fn(be), a.reps) for be in names}
        row = f"{label:32s}" + "".join(f"{t[be] * 1e3:10.3f}ms" for be in names)
        if len(names) > 1:
            row += f"{t['numpy'] / t['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
