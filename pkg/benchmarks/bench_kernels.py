"""Compare the compiled and NumPy chord-mass kernels used by the mollifier.

Usage: python benchmarks/bench_kernels.py [--points P] [--rho Q] [--repeat R]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gammacell import _pykernels
from gammacell.mollifier import SLICE_NODES, Kernel, _gl


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--rho", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        from gammacell import _ckernels
    except ImportError:
        _ckernels = None
    rng = np.random.default_rng(0)
    b = rng.uniform(-0.6, 0.6, (args.points, args.rho))
    rho = np.linspace(0.0, 0.49, args.rho)
    gx, gw = _gl(SLICE_NODES, -1.0, 1.0)
    k = Kernel("bump", 2)
    impls = {"python": _pykernels.slice_mass}
    if _ckernels is not None:
        impls["cython"] = _ckernels.slice_mass
    ref = None
    times = {}
    for name, fn in impls.items():
        out = fn(b, rho, k.code, k.c, gx, gw)
        if ref is None:
            ref = out
        diff = float(np.abs(out - ref).max())
        t = min(timeit.repeat(lambda: fn(b, rho, k.code, k.c, gx, gw), number=1, repeat=args.repeat))
        times[name] = t
        print(f"{name:7s} {t * 1e3:9.1f} ms   max|diff| vs python = {diff:.2e}")
    if "cython" in times:
        print(f"speed-up {times['python'] / times['cython']:.1f}x")
    else:
        print("compiled extension not built; only the NumPy backend was timed")


if __name__ == "__main__":
    main()
