"""Wiener-integral isometry defect across a range of Hurst parameters.

    python3 scripts/isometry_sweep.py --paths 100000 --n-steps 64
"""

import argparse

import numpy as np

from fbmweak.kernel import TimeGrid
from fbmweak.rng import RngStream
from fbmweak.wiener import isometry_battery, test_battery


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hurst", type=float, nargs="+", default=list(np.round(np.arange(0.2, 0.85, 0.1), 2)))
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--n-steps", type=int, default=64)
    ap.add_argument("--sampler", default="cholesky", choices=("cholesky", "circulant", "volterra"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fns = test_battery(1.0)
    pairs = [(n, n) for n in fns] + [("one", "chi_half")]
    grid = TimeGrid(1.0, args.n_steps)
    print("hurst,f,g,empirical,target,relative_se,defect")
    for h in args.hurst:
        res = isometry_battery(fns, pairs, h, args.paths, grid, RngStream(args.seed), args.sampler)
        for (f, g), r in res.items():
            print(f"{h},{f},{g},{r.empirical:.6g},{r.target:.6g},{r.relative_se:.3g},{r.defect:.3g}")


if __name__ == "__main__":
    main()
