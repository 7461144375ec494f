"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs through both backends; outputs are
checked for agreement before timings are reported.
"""

import argparse
import time

import numpy as np

from voxbag import kernels


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    xp = rng.standard_normal((8, 8, 18, 18, 18)).astype(np.float32)
    cols = kernels.python_backend.im2col3d(xp, 3, 3, 3, 1, 1, 1)
    x = rng.standard_normal((8, 16, 16, 16, 16)).astype(np.float32)
    out, arg = kernels.python_backend.maxpool3d_forward(x, 2, 2, 2, 2, 2, 2)
    dout = rng.standard_normal(out.shape).astype(np.float32)
    X = rng.standard_normal((300, 128))
    y = rng.integers(0, 2, 300)
    w = np.ones(300)
    feats = np.arange(128, dtype=np.int64)
    return {
        "im2col3d 8x8x18^3 k3": ("im2col3d", (xp, 3, 3, 3, 1, 1, 1)),
        "col2im3d 8x8x18^3 k3": ("col2im3d", (cols, xp.shape, 3, 3, 3, 1, 1, 1)),
        "maxpool3d_forward 8x16x16^3": ("maxpool3d_forward", (x, 2, 2, 2, 2, 2, 2)),
        "maxpool3d_backward 8x16x16^3": ("maxpool3d_backward", (dout, arg, x.shape)),
        "split_scores 300x128": ("split_scores", (X, y, w, feats, 2)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-6, atol=1e-6, equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled backend not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for label, (name, call_args) in cases(rng).items():
        py = getattr(kernels.python_backend, name)
        cy = getattr(kernels.compiled_backend, name)
        if not _same(py(*call_args), cy(*call_args)):
            raise SystemExit(f"{label}: backends disagree")
        t_py = _best(lambda: py(*call_args), args.repeat)
        t_cy = _best(lambda: cy(*call_args), args.repeat)
        print(f"{label:32s} {t_py * 1e3:10.2f} {t_cy * 1e3:12.2f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
