#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the numpy fallback.

Times the three kernel entry points at the shapes the training loop actually
uses, plus one full forward/backward/update step of the default network.
Run after installing the package:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from lsphase import _kernels_np

try:
    from lsphase import _kernels_cy
except ImportError:
    _kernels_cy = None

from lsphase.kernels import BACKEND
from lsphase.neural import (
    NetworkSpec,
    TrainConfig,
    backward,
    forward,
    init_state,
    npcc_loss,
    optimizer_step,
)

SHAPES = [
    # (batch, cin, H, W, cout, k) as seen by the default widths=(4, 8) net
    (8, 1, 64, 64, 4, 3),
    (8, 4, 64, 64, 4, 3),
    (8, 8, 64, 64, 4, 3),
    (8, 8, 32, 32, 8, 3),
    (8, 16, 32, 32, 8, 3),
    (8, 8, 16, 16, 8, 3),
]


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    impls = {"numpy": _kernels_np}
    if _kernels_cy is not None:
        impls["cython"] = _kernels_cy
    print(f"active backend: {BACKEND}")
    header = f"{'shape':>28} {'op':>8}" + "".join(f"{n:>12}" for n in impls)
    print(header)
    rng = np.random.default_rng(0)
    for b, c, h, w, o, k in SHAPES:
        x = rng.standard_normal((b, c, h, w))
        wgt = rng.standard_normal((o, c, k, k))
        bias = np.zeros(o)
        gy = rng.standard_normal((b, o, h, w))
        label = f"{b}x{c}x{h}x{w} -> {o}ch"
        fwd = {n: timeit(m.conv2d_forward, x, wgt, bias) for n, m in impls.items()}
        grd = {n: timeit(m.conv2d_grad_weights, x, gy, k) for n, m in impls.items()}
        print(f"{label:>28} {'forward':>8}"
              + "".join(f"{fwd[n] * 1e3:>10.2f}ms" for n in impls))
        print(f"{'':>28} {'wgrad':>8}"
              + "".join(f"{grd[n] * 1e3:>10.2f}ms" for n in impls))


def bench_train_step():
    spec = NetworkSpec.for_role("L", (4, 8))
    state = init_state(spec, seed=0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 1, 64, 64))
    t = rng.standard_normal((8, 1, 64, 64))
    cfg = TrainConfig()

    def step():
        y, cache = forward(spec, state, x)
        _, gy = npcc_loss(y, t)
        grads = backward(spec, state, cache, gy)
        optimizer_step(state, grads, cfg)

    dt = timeit(step, repeat=10)
    print(f"\nfull train step, widths=(4, 8), batch 8, 64x64 "
          f"[{BACKEND} backend]: {dt * 1e3:.1f} ms "
          f"(~{dt * 64:.1f} s/epoch at 512 items)")


if __name__ == "__main__":
    bench_kernels()
    bench_train_step()
