"""Time the compiled kernels against their interpreted source.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel is called once to trigger compilation, then timed through both
the numba dispatcher and ``.py_func`` on identical inputs.  With
STALLKIT_DISABLE_NUMBA=1 both columns run the interpreter.
"""
import argparse
import time

import numpy as np

from stallkit import _accel, kernels, sindy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)

    theta = sindy.build_library(rng.normal(size=(3000, 2))).values
    y = theta @ rng.normal(size=(10, 1)) + 0.1 * rng.normal(size=(3000, 1))
    G, c = theta.T @ theta / 3000, (theta.T @ y / 3000)[:, 0]
    yield "lasso_cd (10 terms)", kernels.lasso_cd, lambda: (G, c, 1e-3, np.zeros(10), 1e-12, 100000)

    xi = sindy.normal_form_matrix(0.01, 0.3, -0.001, 0.01)
    yield "euler_rollout (3000 steps)", kernels.euler_rollout, lambda: (xi, np.array([1.0, 0.0]), 0.1, 3000, 1e6)

    Y = rng.normal(size=(2000, 64))
    order = np.arange(2000, dtype=np.int64)
    th_lin = 0.1 * rng.normal(size=2 * 2 * 64 + 2 + 64)
    yield "linear_ae_epoch (2000 x 64)", kernels.linear_ae_epoch, lambda: (
        th_lin.copy(), Y, order, 2, 0.01, 32, 1e-3, 0.9, 0.999, 1e-8,
        np.zeros_like(th_lin), np.zeros_like(th_lin), 0)

    th_nl = 0.1 * rng.normal(size=kernels.nlpca_offsets(64, 16, 2)[-1])
    yield "nlpca_epoch (2000 x 64, h=16)", kernels.nlpca_epoch, lambda: (
        th_nl.copy(), Y, order, 16, 2, 32, 1e-3, 0.9, 0.999, 1e-8,
        np.zeros_like(th_nl), np.zeros_like(th_nl), 0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"backend: {_accel.backend_name()}")
    print(f"{'kernel':32s} {'compiled [s]':>13s} {'python [s]':>11s} {'speedup':>8s}")
    for name, fn, make in cases():
        fn(*make())  # compile
        fast = best_of(lambda: fn(*make()), args.repeat)
        slow = best_of(lambda: fn.py_func(*make()), args.repeat)
        print(f"{name:32s} {fast:13.4f} {slow:11.4f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
