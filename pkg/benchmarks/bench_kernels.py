"""Time the quantizer kernels with and without numba.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from taskjscc import _kernels
from taskjscc.constellation import build_qam


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    z = rng.standard_normal(args.n) + 1j * rng.standard_normal(args.n)
    zr, zi = np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)
    backends = [("numpy", _kernels.nearest_numpy, _kernels.qloss_grad_r_numpy)]
    if _kernels.HAS_NUMBA:
        backends.append(("numba", _kernels.nearest_numba, _kernels.qloss_grad_r_numba))
        # compile outside the timed region
        _kernels.nearest_numba(zr[:4], zi[:4], zr[:4], zi[:4])
        _kernels.qloss_grad_r_numba(zr[:4], zi[:4], zr[:4], zi[:4], 1.0)
    else:
        print("numba not installed; numpy only")
    print(f"{'u':>4} {'kernel':<8} {'backend':<7} {'best ms':>9}")
    for u in (4, 16, 64, 256):
        c = build_qam(u, 3.0)
        pr, pi = np.ascontiguousarray(c.points.real), np.ascontiguousarray(c.points.imag)
        for name, near, qg in backends:
            t1 = min(timeit.repeat(lambda: near(zr, zi, pr, pi), number=1, repeat=args.repeat))
            t2 = min(timeit.repeat(lambda: qg(zr, zi, pr, pi, 3.0), number=1, repeat=args.repeat))
            print(f"{u:>4} {'nearest':<8} {name:<7} {1e3 * t1:>9.2f}")
            print(f"{u:>4} {'qloss':<8} {name:<7} {1e3 * t2:>9.2f}")


if __name__ == "__main__":
    main()
