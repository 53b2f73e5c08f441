"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat R]

Times oblique projection on the disk and box sections and the 1-D W2
quantile sweep and prints the speed-up.  Projections agree bit for bit;
the W2 sums differ only in summation order, so the last column is the
largest relative difference.  Prints a note and exits 0 when the extension is not built.
"""
import argparse
import timeit

import numpy as np

from mvreflect import MovingBox, MovingDisk, normal_field, rotated_field
from mvreflect import _kernels_py as fallback
from mvreflect.kernels import compiled


def projection_case(domain, field, n, seed):
    s = domain.section(0.3)
    rng = np.random.default_rng(seed)
    Y = rng.uniform(-1.6, 1.6, size=(n, domain.dim)) * domain.bounding_radius
    args = (s.kind, s.center, s.radius, s.half, s.corner, field.cos_a, field.sin_a, Y,
            domain.tol_boundary, 4.0 * domain.bounding_radius, 64)
    return lambda impl: impl.project(*args)


def w2_case(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(1.0, 2.0, size=n + 7)
    wx, wy = np.full(n, 1.0 / n), np.full(n + 7, 1.0 / (n + 7))
    return lambda impl: impl.w2_sq_1d(x, wx, y, wy)


def rel_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.subtract(u, v)) / np.maximum(np.abs(u), 1e-300), initial=0.0))
               for u, v in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; nothing to compare")
        return 0
    disk, box = MovingDisk(), MovingBox()
    cases = [
        ("project disk/normal n=20000", projection_case(disk, normal_field(disk), 20_000, 1)),
        ("project box/rotated n=20000", projection_case(box, rotated_field(box), 20_000, 2)),
        ("w2_sq_1d n=100000", w2_case(100_000, 3)),
    ]
    print(f"{'case':32s} {'numpy [ms]':>11s} {'compiled [ms]':>14s} {'speed-up':>9s} {'rel diff':>9s}")
    for name, fn in cases:
        t_py = min(timeit.repeat(lambda: fn(fallback), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_py:11.2f} {t_c:14.2f} {t_py / t_c:8.1f}x {rel_diff(fn(fallback), fn(compiled)):9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
