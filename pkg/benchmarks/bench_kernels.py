"""Time each hot kernel on its numba and numpy paths.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (compilation) is excluded; every kernel is checked for
agreement between the two paths before it is timed.
"""
import argparse
import time

import numpy as np

from lbtest import _kernels
from lbtest.sprt import SprtConfig


def _cases(rng):
    cfg = SprtConfig(zeta_h=0.1)
    args = cfg.kernel_args()
    m = 20_000

    def sprt_step():
        n = np.zeros(m, np.int64)
        z = np.zeros(m, np.int64)
        st = np.zeros(m, np.int8)
        it = np.zeros(m, np.int64)
        return (n, z, st, it, rng.random(m) < 0.1, *args, 1)

    codes = rng.integers(-1, 100, size=200_000)
    q, r = rng.random((2_000, 32)), rng.random((5_000, 32))
    return {
        "sprt_step": sprt_step,
        "sprt_simulate": lambda: (rng.random((10_000, 500)), 0.05, *args),
        "distinct_prefix": lambda: (codes, 100),
        "nearest": lambda: (q, r),
        "gauss_lse": lambda: (q, r, 0.3),
    }


def _copy(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        a = _copy(args)
        t0 = time.perf_counter()
        fn(*a)
        times.append(time.perf_counter() - t0)
    return min(times)


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-10, atol=1e-12) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.NUMBA_IMPL:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, make in _cases(rng).items():
        inputs = make()
        np_fn, nb_fn = _kernels.NUMPY_IMPL[name], _kernels.NUMBA_IMPL[name]
        a1, a2 = _copy(inputs), _copy(inputs)
        r1, r2 = np_fn(*a1), nb_fn(*a2)  # also triggers compilation
        agree = _same(r1, r2) if r1 is not None else _same(a1[:4], a2[:4])
        t_np = _best(np_fn, inputs, args.repeat)
        t_nb = _best(nb_fn, inputs, args.repeat)
        print(f"{name:16s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
