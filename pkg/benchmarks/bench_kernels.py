"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Both variants are imported side by side, so TABAUDIT_NO_NUMBA has no effect
here. The first numba call (compilation, or loading the on-disk cache) is
reported separately and excluded from the steady-state timings.
"""
import argparse
import time

import numpy as np

from tabaudit import _kernels as K


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale, rng):
    n = int(1500 * scale)
    X = rng.normal(size=(n, 16))
    Q = rng.normal(size=(n // 3, 16))
    D = np.sqrt(K.pairwise_sqdist_numpy(X, X))
    labels = rng.integers(0, 4, size=n)
    vals = rng.normal(size=60)
    idx = rng.integers(0, 60, size=(int(20000 * scale), 60))
    return [
        ("pairwise_sqdist", (Q, X)),
        ("two_nearest", (X,)),
        ("mean_knn_distance", (X, 5)),
        ("class_mean_distances", (D, labels, 4)),
        ("resample_means", (vals, idx)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    if K.numba is None:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'compile s':>11}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  max|diff|")
    for name, a in cases(args.scale, rng):
        f_np = getattr(K, f"{name}_numpy")
        f_nb = getattr(K, f"{name}_numba")
        t0 = time.perf_counter()
        out_nb = f_nb(*a)
        first = time.perf_counter() - t0
        out_np = f_np(*a)
        pairs = zip(*(o if isinstance(o, tuple) else (o,) for o in (out_np, out_nb)))
        diff = max(float(np.max(np.abs(u - v))) for u, v in pairs)
        t_np = _best(f_np, a, args.repeat)
        t_nb = _best(f_nb, a, args.repeat)
        print(f"{name:<22}{first:>11.3f}{t_np * 1e3:>11.2f}{t_nb * 1e3:>11.2f}{t_np / t_nb:>8.1f}x  {diff:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
