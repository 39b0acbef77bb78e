"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` wall time for each
backend, the speedup, and whether the two outputs agree.
"""
import argparse
import timeit

import numpy as np

from tabguard import kernels


def cases(n: int, rng: np.random.Generator) -> dict:
    pd = rng.random(1000) * 0.3
    w = rng.random(1000) * 1000.0
    u = rng.random((max(1, n // 20), 1000))
    s = np.round(rng.random(n), 3)
    order = np.argsort(s, kind="stable")
    y = (rng.random(n) < s).astype(np.uint8)
    a, b = np.sort(rng.normal(0, 1, n)), np.sort(rng.normal(0.2, 1, n + 7))
    edges = np.linspace(0.0, 1.0, 11)
    return {
        "portfolio_losses": (u, pd, w),
        "auc_counts": (s[order], y[order]),
        "ks_gap": (a, b),
        "bin_stats": (s, y.astype(np.float64), edges),
        "wasserstein_sorted": (a, b),
    }


def agree(x, y) -> bool:
    if isinstance(x, tuple):
        return all(agree(p, q) for p, q in zip(x, y))
    return bool(np.allclose(x, y, rtol=1e-12, atol=1e-12))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000, help="rows per kernel input")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled extension not built; only the fallback is available")
    data = cases(args.n, np.random.default_rng(args.seed))
    print(f"{'kernel':<20} {'python ms':>10} {'cython ms':>10} {'speedup':>8}  agree")
    for name, inputs in data.items():
        py = getattr(kernels.python_backend, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if kernels.compiled_backend is None:
            print(f"{name:<20} {t_py:>10.3f} {'-':>10} {'-':>8}  -")
            continue
        cy = getattr(kernels.compiled_backend, name)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        ok = agree(py(*inputs), cy(*inputs))
        print(f"{name:<20} {t_py:>10.3f} {t_cy:>10.3f} {t_py / t_cy:>7.1f}x  {'yes' if ok else 'NO'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
