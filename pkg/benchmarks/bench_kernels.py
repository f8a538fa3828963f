"""Time the numba and pure-numpy kernel paths against each other.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call (compilation, or loading the on-disk cache) is done
before timing starts.
"""

import argparse
import time

import numpy as np

from viewgroup import kernels
from viewgroup.vgl import similarity_matrix


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def vgl_case(batch, n_aug, seed=0):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(batch), n_aug).astype(np.int64)
    sims = similarity_matrix(rng.standard_normal((groups.size, 128)))
    return sims, groups


def sampler_case(size, out, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.random((size, size, 3))
    ys, xs = np.meshgrid(np.linspace(-3, size + 3, out), np.linspace(-3, size + 3, out), indexing="ij")
    return img, ys, xs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rows = []
    for b, n in [(8, 6), (16, 10), (32, 20)]:
        sims, groups = vgl_case(b, n)
        nb = lambda: kernels._vgl_rows_numba(sims, groups, 0.2, True, 1.0, True)
        npy = lambda: kernels._vgl_rows_numpy(sims, groups, 0.2, True, 1.0, True)
        nb()
        diff = np.max(np.abs(nb()[1] - npy()[1]))
        rows.append((f"vgl_rows B={b} N={n} ({b * n} views)", best_of(npy, args.repeat), best_of(nb, args.repeat), diff))
    for size, out in [(32, 32), (64, 64), (224, 224)]:
        img, ys, xs = sampler_case(size, out)
        nb = lambda: kernels._sample_bilinear_numba(img, ys, xs)
        npy = lambda: kernels._sample_bilinear_numpy(img, ys, xs)
        nb()
        diff = np.max(np.abs(nb() - npy()))
        rows.append((f"sample_bilinear {size}px -> {out}px", best_of(npy, args.repeat), best_of(nb, args.repeat), diff))

    print(f"{'case':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for name, t_np, t_nb, diff in rows:
        print(f"{name:38s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
