"""Time the compiled and numpy stencil kernels on the same inputs.

    python benchmarks/bench_kernels.py [--n-y 401] [--n-theta 32] [--repeat 50]
"""

import argparse
import timeit

import numpy as np

from neckflow import kernels
from neckflow.geometry import SQRT2, StripGrid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-y", type=int, default=401)
    ap.add_argument("--n-theta", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    for nt in (1, args.n_theta):
        g = StripGrid(-12.0, 12.0, args.n_y, nt)
        u = SQRT2 + 0.05 * rng.standard_normal(g.shape)
        args_rhs = (u, g.y, g.h_y, g.h_theta, True)
        ref = kernels.graph_rhs(*args_rhs, backend="python")
        row = [f"n_y={args.n_y} n_theta={nt}"]
        times = {}
        for be in ("python", "cython"):
            try:
                out = kernels.graph_rhs(*args_rhs, backend=be)
            except ImportError:
                row.append(f"{be}: unavailable")
                continue
            err = float(np.abs(out - ref).max())
            t = min(timeit.repeat(lambda: kernels.graph_rhs(*args_rhs, backend=be), number=args.repeat, repeat=3))
            times[be] = t / args.repeat
            row.append(f"{be}: {1e6 * times[be]:9.1f} us/call (max diff {err:.1e})")
        if len(times) == 2:
            row.append(f"speedup {times['python'] / times['cython']:.1f}x")
        print("  graph_rhs  " + " | ".join(row))
        ref = kernels.lc_apply(u - SQRT2, g.y, g.h_y, g.h_theta, backend="python")
        row = []
        for be in ("python", "cython"):
            try:
                t = min(timeit.repeat(lambda: kernels.lc_apply(u - SQRT2, g.y, g.h_y, g.h_theta, backend=be),
                                      number=args.repeat, repeat=3))
            except ImportError:
                continue
            row.append(f"{be}: {1e6 * t / args.repeat:9.1f} us/call")
        print("  lc_apply   " + " | ".join(row))


if __name__ == "__main__":
    main()
