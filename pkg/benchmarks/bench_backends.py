"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--components N] [--repeat R]

Each case is one product of ``N`` small components of a single kind (the
shape of a PEM built from a layer of 3x3 kernels); we time tangent
projection and retraction on both backends and report the speed-up.
"""
import argparse
import timeit

import numpy as np

from pemopt import _kernels_py
from pemopt.manifolds import ManifoldSpec
from pemopt.product import ProductManifold

try:
    from pemopt import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def bench_case(kind, n, repeat, number):
    M = ProductManifold([ManifoldSpec(kind, 3, 3)] * n)
    p = M.random_point(0)
    g = np.random.default_rng(1).standard_normal(M.total_ambient_dim)
    tangent, out = np.empty_like(p), np.empty_like(p)
    layout = M.layout
    results = {}
    for name, mod in (("python", _kernels_py), ("cython", _kernels_c)):
        if mod is None:
            continue
        proj = min(timeit.repeat(lambda: mod.project(*layout, p, g, tangent),
                                 repeat=repeat, number=number)) / number
        retr = min(timeit.repeat(lambda: mod.retract(*layout, p, tangent, -0.1, out),
                                 repeat=repeat, number=number)) / number
        results[name] = (proj, retr)
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--components", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)

    if _kernels_c is None:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kind':<10}{'backend':<9}{'project us':>12}{'retract us':>12}{'speed-up':>10}")
    for kind in ("Euclidean", "Sphere", "Oblique", "Stiefel"):
        res = bench_case(kind, args.components, args.repeat, args.number)
        base = sum(res["python"])
        for name, (proj, retr) in res.items():
            speedup = base / (proj + retr)
            print(f"{kind:<10}{name:<9}{proj * 1e6:>12.1f}{retr * 1e6:>12.1f}{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
