#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Covers the three hot paths: 3x3 convolution forward/backward at the
training shapes, the fused SGD update, and Siddon ray traversal.

Usage:
    python benchmarks/bench_kernels.py [--threads N] [--repeat N]
"""

import argparse
import time

import numpy as np

from bolotomo.kernels import _numba, _numpy


def timeit(fn, *args, repeat=50, warmup=3):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def row(name, t_np, t_nb, work=None):
    speedup = t_np / t_nb
    extra = ""
    if work is not None:
        extra = f"  ({2 * work / t_nb / 1e9:6.1f} GFLOP/s numba)"
    print(f"{name:<28} numpy {t_np * 1e3:8.3f} ms   numba {t_nb * 1e3:8.3f} ms "
          f"  x{speedup:5.2f}{extra}")


def bench_conv(repeat):
    rng = np.random.default_rng(0)
    shapes = [
        ("conv fwd  10x2x50x30 ->12", (10, 2, 12, 50, 30)),
        ("conv fwd  10x12x50x30->12", (10, 12, 12, 50, 30)),
        ("conv fwd  1x30x200x120->30", (1, 30, 30, 200, 120)),
    ]
    for name, (B, cin, cout, H, W) in shapes:
        x = rng.standard_normal((B, cin, H, W)).astype(np.float32)
        k = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        t_np = timeit(_numpy.conv2d_forward, x, k, b, repeat=repeat)
        t_nb = timeit(_numba.conv2d_forward, x, k, b, repeat=repeat)
        row(name, t_np, t_nb, work=B * cin * cout * 9 * H * W)

        g = rng.standard_normal((B, cout, H, W)).astype(np.float32)
        t_np = timeit(_numpy.conv2d_input_grad, g, k, repeat=repeat)
        t_nb = timeit(_numba.conv2d_input_grad, g, k, repeat=repeat)
        row(name.replace("fwd ", "gx  "), t_np, t_nb,
            work=B * cin * cout * 9 * H * W)

        t_np = timeit(_numpy.conv2d_param_grad, x, g, repeat=repeat)
        t_nb = timeit(_numba.conv2d_param_grad, x, g, repeat=repeat)
        row(name.replace("fwd ", "gk  "), t_np, t_nb,
            work=B * cin * cout * 9 * H * W)


def bench_sgd(repeat):
    rng = np.random.default_rng(1)
    for n in (750 * 750, 3000 * 3000):
        p_np = rng.standard_normal(n).astype(np.float32)
        p_nb = p_np.copy()
        g = rng.standard_normal(n).astype(np.float32)
        t_np = timeit(_numpy.sgd_update, p_np, g, 1e-3, repeat=repeat)
        t_nb = timeit(_numba.sgd_update, p_nb, g, 1e-3, repeat=repeat)
        row(f"sgd update n={n:>8}", t_np, t_nb)


def bench_siddon(repeat):
    rng = np.random.default_rng(2)
    rays = rng.uniform(0.0, 2.0, size=(200, 4))
    rays[:, 1] *= 1.75
    rays[:, 3] *= 1.75

    def run(mod):
        for x0, y0, x1, y1 in rays:
            mod.siddon_trace(x0, y0, x1, y1, 115, 196,
                             2.0 / 115, 3.5 / 196, 0.0, 0.0)

    t_np = timeit(run, _numpy, repeat=max(repeat // 5, 3))
    t_nb = timeit(run, _numba, repeat=max(repeat // 5, 3))
    row("siddon 200 rays 115x196", t_np, t_nb)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    import numba
    numba.set_num_threads(args.threads)
    print(f"numpy {np.__version__}, numba {numba.__version__}, "
          f"threads={args.threads}")
    bench_conv(args.repeat)
    bench_sgd(args.repeat)
    bench_siddon(args.repeat)


if __name__ == "__main__":
    main()
