#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins, then a full training step on each backend.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import time

import numpy as np

from liteasc.nn import _kernels as K
from liteasc.nn import forward, init_params, network_backward, paper_config


def _best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation on the numba path
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    # shapes of the first block of the default network on a batch of 4
    x = rng.normal(size=(4, 64, 423, 32)).astype(np.float32)
    k = rng.normal(size=(3, 3, 32)).astype(np.float32)
    b = rng.normal(size=32).astype(np.float32)
    g = rng.normal(size=x.shape).astype(np.float32)
    x2 = x.reshape(-1, 32)
    gamma, beta = np.ones(32, np.float32), np.zeros(32, np.float32)
    _, xhat2, _, _, inv_std = K.bn_train_forward_np(x2, gamma, beta, 1e-3)
    _, idx = K.maxpool_forward_np(x)
    gp = rng.normal(size=idx.shape).astype(np.float32)
    return {
        "depthwise forward": (lambda: K.depthwise_forward_nb(x, k, b), lambda: K.depthwise_forward_np(x, k, b)),
        "depthwise backward": (lambda: K.depthwise_backward_nb(x, k, g), lambda: K.depthwise_backward_np(x, k, g)),
        "maxpool forward": (lambda: K.maxpool_forward_nb(x), lambda: K.maxpool_forward_np(x)),
        "maxpool backward": (lambda: K.maxpool_backward_nb(gp, idx, np.zeros(x.shape, np.float32)),
                             lambda: K.maxpool_backward_np(gp, idx, x.shape)),
        "batchnorm forward": (lambda: K.bn_train_forward_nb(x2, gamma, beta, 1e-3),
                              lambda: K.bn_train_forward_np(x2, gamma, beta, 1e-3)),
        "batchnorm backward": (lambda: K.bn_backward_nb(x2, xhat2, gamma, inv_std, True),
                               lambda: K.bn_backward_np(x2, xhat2, gamma, inv_std, True)),
    }


def train_step(rng, batch):
    cfg = paper_config()
    p = init_params(cfg, rng)
    x = rng.normal(size=(batch,) + cfg.input_shape).astype(np.float32)
    y = np.eye(10, dtype=np.float32)[rng.integers(0, 10, batch)]

    def step():
        _, cache = forward(x, p, cfg, "train")
        network_backward(cache, y)
    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--batch", type=int, default=4, help="batch size for the training-step timing")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fast, slow) in kernel_cases(rng).items():
        t_nb, t_np = _best_of(fast, args.repeat), _best_of(slow, args.repeat)
        print(f"{name:<22}{1e3 * t_nb:10.1f}{1e3 * t_np:10.1f}{t_np / t_nb:8.1f}x")

    step = train_step(rng, args.batch)
    saved = K.USE_NUMBA
    timings = {}
    try:
        for flag in (True, False):
            K.USE_NUMBA = flag
            timings[flag] = _best_of(step, args.repeat)
    finally:
        K.USE_NUMBA = saved
    print(f"{'train step (batch ' + str(args.batch) + ')':<22}{1e3 * timings[True]:10.1f}"
          f"{1e3 * timings[False]:10.1f}{timings[False] / timings[True]:8.1f}x")


if __name__ == "__main__":
    main()
