"""Verdicts, orders and timings for five (h, p) points of the two-state system.

    python3 scripts/reference_rows.py [--out results/reference_rows.csv]
"""
import argparse
import time

import numpy as np

from delaystab import analyze, validate_system
from delaystab.cli import emit_results

# (h, p): reference r_hat, r_star and verdict
ROWS = [((0.1, -0.1), 26, 12, "Stable"), ((0.25, -0.8), 79, 22, "Stable"), ((0.3, 0.1), 2020, 463, "Stable"),
        ((0.2, 2.0), 507, 111, "Unstable"), ((0.5, 0.5), 9742, 795, "Unstable")]


def two_state(h, p):
    return validate_system({"A": [np.zeros((2, 2)), [[-1.0, 0.5], [0.0, p]]], "G": [[[0.0, 0.0], [-1.0, 0.0]]],
                            "h": h})


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/reference_rows.csv")
    args = ap.parse_args()
    rows = []
    print(f"{'(h, p)':>13} {'r_hat':>12} {'r_star':>11} {'verdicts':>18} {'oracle':>9} {'time':>7}")
    for (h, p), rh, rs, want in ROWS:
        t0 = time.perf_counter()
        rep = analyze(two_state(h, p))
        dt = time.perf_counter() - t0
        print(f"{str((h, p)):>13} {rep.r_hat:>6} ({rh:>4}) {rep.r_star:>5} ({rs:>3}) "
              f"{str(rep.verdict_thm8) + '/' + str(rep.verdict_thm9):>18} {rep.oracle_verdict:>9} {dt:6.1f}s")
        rows.append({"h": h, "p": p, "r_hat": rep.r_hat, "r_hat_ref": rh, "r_star": rep.r_star, "r_star_ref": rs,
                     "nu": rep.bounds["nu"], "alpha0": rep.bounds["alpha0"], "verdict_thm8": str(rep.verdict_thm8),
                     "verdict_thm9": str(rep.verdict_thm9), "verdict_ref": want, "oracle": rep.oracle_verdict,
                     "pd_margin": rep.pd_margin, "seconds": round(dt, 3)})
    emit_results(rows, args.out, "csv")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
