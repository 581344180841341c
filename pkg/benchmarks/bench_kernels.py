#!/usr/bin/env python3
"""Time the numba kernel backend against the pure-numpy fallback.

Runs every dual-backend kernel on training-shaped inputs and prints a
per-kernel table: mean microseconds per call for each backend, the speedup,
and the max absolute output difference (the backends may disagree by a few
ulps from summation order).

Run as ``python3 benchmarks/bench_kernels.py``. The numba column needs numba
importable and AVMAE_NUMBA unset (or not "0"); with the fallback forced the
script still reports the numpy timings.
"""

import argparse
import time

import numpy as np

from avmae import kernels


def _timeit(fn, make_args, target: float) -> float:
    fn(*make_args())  # warmup; first numba call compiles or loads the cache
    t0 = time.perf_counter()
    fn(*make_args())
    once = max(time.perf_counter() - t0, 1e-7)
    iters = max(3, int(target / once))
    args = make_args()
    t0 = time.perf_counter()
    for _ in range(iters):
        fn(*args)
    return (time.perf_counter() - t0) / iters


def _max_diff(name: str, out_np, out_nb, args_np, args_nb) -> float:
    if name in ("adam_step", "sgdm_step"):  # in-place: compare the params
        return float(np.max(np.abs(args_np[0] - args_nb[0])))
    if isinstance(out_np, tuple):
        return max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
                   for a, b in zip(out_np, out_nb))
    return float(np.max(np.abs(out_np - out_nb)))


def build_cases(dtype):
    g = np.random.default_rng(0)

    def arr(*shape):
        return g.normal(size=shape).astype(dtype)

    x = arr(4096, 256)
    dy = arr(4096, 256)
    att = arr(2048, 256)
    sm = kernels.numpy_impls["softmax_fwd"](att)
    gamma, beta = arr(256), arr(256)
    _, mean, rstd = kernels.numpy_impls["layernorm_fwd"](x, gamma, beta, 1e-6)
    p, grad = arr(1_000_000), arr(1_000_000)
    zeros = np.zeros_like(p)

    return [
        ("gelu_fwd", lambda: (x.copy(),)),
        ("gelu_bwd", lambda: (x.copy(), dy.copy())),
        ("softmax_fwd", lambda: (att.copy(),)),
        ("softmax_bwd", lambda: (sm.copy(), dy[:2048].copy())),
        ("layernorm_fwd", lambda: (x.copy(), gamma.copy(), beta.copy(), 1e-6)),
        ("layernorm_bwd", lambda: (x.copy(), gamma.copy(), mean.copy(),
                                   rstd.copy(), dy.copy())),
        ("adam_step", lambda: (p.copy(), grad.copy(), zeros.copy(), zeros.copy(),
                               1e-3, 0.9, 0.95, 1e-8, 0.1, 0.05)),
        ("sgdm_step", lambda: (p.copy(), grad.copy(), zeros.copy(), 1e-3, 0.9)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    ap.add_argument("--target", type=float, default=0.2,
                    help="seconds of timed work per cell")
    args = ap.parse_args()

    have_nb = kernels.numba_impls is not None
    print(f"active avmae backend: {kernels.BACKEND}; dtype {args.dtype}")
    if not have_nb:
        print("numba unavailable (not installed or AVMAE_NUMBA=0): "
              "timing the numpy fallback only")
    header = f"{'kernel':<15}{'numpy us':>12}{'numba us':>12}{'speedup':>9}{'max |diff|':>12}"
    print(header)
    print("-" * len(header))

    for name, make_args in build_cases(np.dtype(args.dtype)):
        t_np = _timeit(kernels.numpy_impls[name], make_args, args.target)
        if have_nb:
            t_nb = _timeit(kernels.numba_impls[name], make_args, args.target)
            a_np, a_nb = make_args(), make_args()
            out_np = kernels.numpy_impls[name](*a_np)
            out_nb = kernels.numba_impls[name](*a_nb)
            diff = _max_diff(name, out_np, out_nb, a_np, a_nb)
            print(f"{name:<15}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}"
                  f"{t_np / t_nb:>8.2f}x{diff:>12.2e}")
        else:
            print(f"{name:<15}{t_np * 1e6:>12.1f}{'-':>12}{'-':>9}{'-':>12}")


if __name__ == "__main__":
    main()
