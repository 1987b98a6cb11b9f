"""5 x 5 (k1, k2) sweep of the vehicle-chain system with per-point oracle agreement.

    python3 scripts/vehicle_chain_sweep.py [--workers 4] [--out results/example1]
"""
import argparse
import time
from collections import Counter
from pathlib import Path

from delaystab.cli import SWEEP_COLUMNS, emit_results, run_sweep
from delaystab.config import parse_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "example1.json"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = parse_config(args.config)
    t0 = time.perf_counter()
    rows, reports = run_sweep(cfg, workers=args.workers)
    out = Path(args.out or cfg.out_dir)
    emit_results(rows, out / "sweep.csv", "csv", SWEEP_COLUMNS)
    emit_results(reports, out / "sweep.json", "json")
    tally = Counter((r["verdict_thm8"], r["verdict_thm9"], r["oracle_verdict"]) for r in rows)
    for key, cnt in sorted(tally.items(), key=str):
        print(f"{cnt:3d}  thm8={key[0]}  thm9={key[1]}  oracle={key[2]}")
    for rep in reports:
        if rep.get("consistent") is not True:
            print(f"  {rep['parameters']}: consistent={rep.get('consistent')} r_hat={rep.get('r_hat')} "
                  f"{'; '.join(rep.get('diagnostics', []))}")
    print(f"{len(rows)} points in {time.perf_counter() - t0:.1f}s, wrote {out}/sweep.csv")


if __name__ == "__main__":
    main()
