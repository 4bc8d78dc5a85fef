"""Compare the compiled and numpy SGD kernels on the default network shape.

    python benchmarks/bench_kernels.py [--frames 500] [--epochs 20] [--repeat 5]
"""

import argparse
import time

import numpy as np

from fedprint import kernels
from fedprint.nn import init_params


def time_backend(name, dims, x, y, orders, batch, repeat):
    fn = kernels.get_sgd_epochs(name)
    best = float("inf")
    for _ in range(repeat):
        p = init_params(dims, 0)
        start = time.perf_counter()
        fn(p.weights, p.biases, x, y, orders, 0.1, batch)
        best = min(best, time.perf_counter() - start)
    return best, p


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, nargs="+", default=[8, 32, 128])
    args = ap.parse_args(argv)

    dims = [32, 64, 64, 64, 64, 64, 64, 10]
    g = np.random.default_rng(0)
    x = g.normal(size=(args.frames, dims[0]))
    y = g.integers(0, dims[-1], size=args.frames).astype(np.int64)
    orders = np.stack([g.permutation(args.frames) for _ in range(args.epochs)]).astype(np.int64)

    print(f"backends: {sorted(kernels.BACKENDS)} (active: {kernels.BACKEND})")
    print(f"{'batch':>6} {'backend':>8} {'seconds':>9} {'speedup':>8} {'max |diff|':>11}")
    for batch in args.batch:
        ref_t, ref_p = time_backend("python", dims, x, y, orders, batch, args.repeat)
        print(f"{batch:>6} {'python':>8} {ref_t:>9.4f} {1.0:>8.2f} {'-':>11}")
        if "cython" in kernels.BACKENDS:
            t, p = time_backend("cython", dims, x, y, orders, batch, args.repeat)
            diff = max(float(np.abs(a - b).max()) for a, b in zip(ref_p.arrays(), p.arrays()))
            print(f"{batch:>6} {'cython':>8} {t:>9.4f} {ref_t / t:>8.2f} {diff:>11.1e}")


if __name__ == "__main__":
    main()
