"""Compare the compiled and pure-Python kernel backends.

Times each kernel on representative shapes, then one full forward/backward
training step of the network with each backend swapped in.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from plaqueseg import kernels
from plaqueseg.autodiff import backprop, getitem
from plaqueseg.losses import dice_loss
from plaqueseg.model import ModelConfig, build, forward


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 32, 64, 64)).astype(np.float32)
    ho = wo = 64
    cols = kernels.im2col(x, 3, 3, 1, 2, 2, ho, wo)
    g = rng.standard_normal((4, 32, 32, 32)).astype(np.float32)
    _, arg = kernels.maxpool2x2(x)
    mask = (rng.random((256, 256)) < 0.5).astype(np.uint8)
    blob = np.zeros((256, 256), np.uint8)
    blob[40:200, 30:220] = 1
    blob[90:120, 80:110] = 0
    se = np.ones((5, 5), np.uint8)
    ys, xs = np.nonzero(blob)
    pts = np.stack([ys, xs], 1)[::7].astype(np.int64)
    return {
        "im2col 4x32x64x64 d=2": lambda k: k.im2col(x, 3, 3, 1, 2, 2, ho, wo),
        "col2im 4x32x64x64 d=2": lambda k: k.col2im(cols, 4, 32, 64, 64, 3, 3, 1, 2, 2, ho, wo),
        "maxpool2x2 4x32x64x64": lambda k: k.maxpool2x2(x),
        "maxpool2x2 backward": lambda k: k.maxpool2x2_backward(g, arg),
        "label 256x256 p=0.5": lambda k: k.label(mask, 8),
        "erode 256x256 5x5": lambda k: k.erode(blob, se),
        "fill_holes 256x256": lambda k: k.fill_holes(blob),
        "min_sq_dists": lambda k: k.min_sq_dists(pts, pts[::-1].copy()),
    }


def training_step(size, base, batch):
    model = build(ModelConfig(base_channels=base, input_size=(size, size)), seed=0)
    rng = np.random.default_rng(1)
    x = rng.random((batch, 1, size, size)).astype(np.float32)
    label = (rng.random((batch, size, size)) < 0.3).astype(np.float32)

    def step():
        for p in model.parameters():
            p.zero_grad()
        loss = dice_loss(getitem(forward(model, x), (slice(None), 1)), label)
        backprop(loss)
    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--base", type=int, default=8)
    ap.add_argument("--batch", type=int, default=2)
    args = ap.parse_args(argv)

    backends = kernels.backends()
    names = sorted(backends)
    print(f"selected backend: {kernels.BACKEND}; available: {', '.join(names)}")
    header = f"{'case':<28}" + "".join(f"{n + ' ms':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)

    def row(label, times):
        line = f"{label:<28}" + "".join(f"{times[n] * 1e3:>14.2f}" for n in names)
        if len(names) == 2:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)

    for label, fn in kernel_cases().items():
        row(label, {n: _best(lambda: fn(backends[n]), args.repeat) for n in names})

    step = training_step(args.size, args.base, args.batch)
    saved = kernels._impl
    times = {}
    try:
        for n in names:
            kernels._impl = backends[n]
            step()  # warm-up
            times[n] = _best(step, max(1, args.repeat // 2))
    finally:
        kernels._impl = saved
    row(f"train step {args.size}px b={args.base}", times)


if __name__ == "__main__":
    main()
