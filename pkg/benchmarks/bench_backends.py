"""Times the numba kernels against the pure-numpy fallback.

Runs each kernel on shapes the network actually sees during full-image
DRIVE training, plus the small composite forward/backward, and prints a
speedup table.  Both backends are imported directly, bypassing the
RCNET_BACKEND selection.

    python3 benchmarks/bench_backends.py [--repeat N]
"""

import argparse
import time

import numpy as np

from rcnet.kernels import _numba, _numpy


def timeit(fn, repeat):
    fn()  # warm up (jit compile, caches)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, calls, repeat):
    args = make_args()
    rows = []
    for label, fn in calls:
        t_np = timeit(lambda: fn(_numpy, *args), repeat)
        t_nb = timeit(lambda: fn(_numba, *args), repeat)
        rows.append((f"{name} {label}", t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cases = []

    def conv_args(n, cin, cout, hw, k):
        xp = rng.random((n, cin, hw[0] + k - 1, hw[1] + k - 1),
                        dtype=np.float32)
        w = rng.random((cout, cin, k, k), dtype=np.float32)
        go = rng.random((n, cout, hw[0], hw[1]), dtype=np.float32)
        return xp, w, go

    for cin, cout, hw, tag in ((3, 8, (584, 568), "full-res 3->8"),
                               (16, 32, (292, 284), "half-res 16->32"),
                               (32, 32, (146, 142), "quarter-res 32->32")):
        xp, w, go = conv_args(1, cin, cout, hw, 3)
        cases += bench_case(
            f"conv3x3 {tag}", lambda a=(xp, w, go): a,
            [("forward", lambda m, xp, w, go: m.conv2d_forward(xp, w)),
             ("grad w", lambda m, xp, w, go: m.conv2d_backward_kernel(xp, go)),
             ("grad x", lambda m, xp, w, go: m.conv2d_backward_input(
                 w, go, xp.shape[2], xp.shape[3]))],
            args.repeat)

    x = rng.random((1, 16, 584, 568), dtype=np.float32)
    out, idx = _numpy.maxpool2d_forward(x)
    cases += bench_case(
        "pool 16ch full-res", lambda: (x, out, idx),
        [("forward", lambda m, x, out, idx: m.maxpool2d_forward(x)),
         ("scatter", lambda m, x, out, idx: m.scatter_by_index(
             out, idx, x.shape[2], x.shape[3])),
         ("gather", lambda m, x, out, idx: m.gather_by_index(
             m.scatter_by_index(out, idx, x.shape[2], x.shape[3]), idx))],
        args.repeat)

    width = max(len(r[0]) for r in cases) + 2
    print(f"{'kernel':<{width}} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, t_np, t_nb in cases:
        print(f"{name:<{width}} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
