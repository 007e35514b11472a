"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Kernel timings call both backends directly.  ``--end-to-end`` also times a
training step of the order-2 network in two subprocesses, one per backend,
since the backend is fixed at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from se2din import kernels

STEP = """
import time
import numpy as np
from se2din import kernels, train
from se2din.tensor import Tape, softmax_cross_entropy
m = train.build_model(train.Hyperparams(order={order}))
x = np.random.default_rng(0).uniform(size=(64, 28, 28, 1)).astype(np.float32)
y = np.arange(64) % 10
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    with Tape() as tape:
        loss = softmax_cross_entropy(m.forward(x, training=True), y)
    tape.backward(loss)
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def cases(dt):
    g = np.random.default_rng(0)
    n = 64 * 28 * 28  # one batch of pixels
    jet = g.normal(size=(n, 20 * 10)).astype(dt)
    gout = g.normal(size=(n, 20 * 5)).astype(dt)
    f4 = g.normal(size=(n, 20, 2, 2)).astype(dt)
    u3 = g.normal(size=(n, 20, 2)).astype(dt)
    gf = g.normal(size=f4.shape).astype(dt)
    x = g.normal(size=(n, 20)).astype(dt)
    mean, inv = x.mean(0).astype(dt), (1 / x.std(0)).astype(dt)
    gamma, beta = np.ones(20, dt), np.zeros(20, dt)
    return {
        "invariants2_forward": lambda k: k.invariants2_forward(jet, 10, 1e-6),
        "invariants2_backward": lambda k: k.invariants2_backward(jet, gout, 10, 1e-6),
        "directional_forward": lambda k: k.directional_forward(f4, u3, 1e-6),
        "directional_backward": lambda k: k.directional_backward(f4, u3, gf, 1e-6),
        "channel_moments": lambda k: k.channel_moments(x),
        "normalize_affine": lambda k: k.normalize_affine(x, mean, inv, gamma, beta),
        "batchnorm_backward": lambda k: k.batchnorm_backward(x, x, gamma, inv, True),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args(argv)
    impls = kernels.implementations()
    names = list(impls)
    print(f"{'kernel':<24}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases(np.float32).items():
        times = [min(timeit.repeat(lambda: fn(impls[b]), number=1, repeat=args.repeat)) * 1e3 for b in names]
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{name:<24}" + "".join(f"{t:>12.2f}" for t in times) + speed)
    if args.end_to_end:
        print("\ntraining step, batch 64, best of", args.repeat)
        for order in (2, 3):
            for pure in ("1", "0"):
                env = dict(os.environ, SE2DIN_PURE_PYTHON=pure)
                out = subprocess.run([sys.executable, "-c", STEP.format(order=order, repeat=args.repeat)],
                                     env=env, capture_output=True, text=True, check=True).stdout.split()
                print(f"order {order}  {out[0]:<7} {float(out[1]):.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
