"""Write K_H(t_i, s_j) on a uniform grid as CSV (t, s, h, K_H).

    python3 scripts/kernel_table.py --hurst 0.7 --n-steps 16 --out kernel_0.7.csv
"""

import argparse

from fbmweak.cli import write_kernel_table
from fbmweak.kernel import TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hurst", type=float, default=0.7)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--n-steps", type=int, default=16)
    ap.add_argument("--out", default="kernel_table.csv")
    args = ap.parse_args()
    rows = write_kernel_table(args.out, args.hurst, TimeGrid(args.horizon, args.n_steps))
    print(f"wrote {rows} rows to {args.out}")


if __name__ == "__main__":
    main()
