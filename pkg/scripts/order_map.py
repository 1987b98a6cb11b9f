"""Coarse map of r_hat and r_star over (h, p) for the two-state system (no definiteness tests).

    python3 scripts/order_map.py [--nh 8] [--np 8] [--out results/order_map.csv]
"""
import argparse

import numpy as np

from delaystab.bounds import compute_bounds
from delaystab.cli import emit_results
from delaystab.lyapunov import LyapunovConditionError, build_lyapunov_matrix, nu_bound
from delaystab.model import validate_system


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nh", type=int, default=8)
    ap.add_argument("--np", type=int, default=8)
    ap.add_argument("--out", default="results/order_map.csv")
    args = ap.parse_args()
    rows = []
    for h in np.linspace(0.05, 0.5, args.nh):
        for p in np.linspace(-1.5, 1.0, args.np):
            s = validate_system({"A": [np.zeros((2, 2)), [[-1.0, 0.5], [0.0, p]]],
                                 "G": [[[0.0, 0.0], [-1.0, 0.0]]], "h": h})
            try:
                bs = compute_bounds(s, nu_bound(build_lyapunov_matrix(s, P=300)))
                rows.append({"h": float(h), "p": float(p), "r_hat": bs.r_hat, "r_star": bs.r_star})
            except (LyapunovConditionError, ValueError):
                rows.append({"h": float(h), "p": float(p), "r_hat": None, "r_star": None})
    emit_results(rows, args.out, "csv")
    print(f"{len(rows)} points, wrote {args.out}")


if __name__ == "__main__":
    main()
