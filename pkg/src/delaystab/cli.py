"""Command line entry point: check, sweep, lyapmat, fundamental, oracle.

Exit codes: 0 stable, 1 unstable (or Lyapunov condition fails), 2 marginal,
3 error or disagreement between the criterion and the root count.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .criterion import Verdict, analyze
from .fundamental import compute_fundamental
from .lyapunov import build_lyapunov_matrix, eval_U
from .model import SystemValidationError
from .oracle import count_unstable_roots, imaginary_axis_scan

log = logging.getLogger("delaystab")

EXIT_STABLE, EXIT_UNSTABLE, EXIT_MARGINAL, EXIT_ERROR = 0, 1, 2, 3

SWEEP_COLUMNS = ["p1", "p2", "lyap_cond", "r_hat", "r_star", "verdict_thm8", "verdict_thm9",
                 "oracle_verdict", "pd_margin", "t_total_sec"]

_verdicts = ["Stable", "Unstable", "LyapunovConditionFails", "Marginal", "Error", None]
_num = {"type": ["number", "null"]}
_int = {"type": ["integer", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["parameters", "lyapunov_condition", "r_hat", "r_star", "verdict_thm8", "verdict_thm9",
                 "pd_margin", "oracle_verdict", "timings"],
    "properties": {
        "parameters": {"type": "object", "additionalProperties": {"type": "number"}},
        "lyapunov_condition": {"type": ["boolean", "null"]},
        "lyapunov_cond_number": _num,
        "r_hat": _int,
        "r_star": _int,
        "verdict_thm8": {"enum": _verdicts},
        "verdict_thm9": {"enum": _verdicts},
        "pd_margin": _num,
        "pd_margin_kind": {"type": ["string", "null"]},
        "tested_r_thm8": _int,
        "pd_margin_thm9": _num,
        "tested_r_thm9": _int,
        "witness_r": _int,
        "oracle_verdict": {"enum": ["Stable", "Unstable", "Marginal", None]},
        "oracle_root_count": _int,
        "axis_min": _num,
        "consistent": {"type": ["boolean", "null"]},
        "bounds": {"type": "object"},
        "residuals": {"type": "object"},
        "diagnostics": {"type": "array", "items": {"type": "string"}},
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "additionalProperties": False,
}


def _clean(x):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def run_check(cfg: RunConfig, values: dict | None = None) -> dict:
    """Both finite tests plus the root count for one parameter point."""
    if values is None:
        if cfg.free_parameters:
            raise ValueError(f"check needs fixed parameters; {cfg.free_parameters} are swept")
        values = cfg.points()[0] if cfg.params else {}
    sys_ = cfg.instantiate(values)
    report = analyze(sys_, cfg.numerics)
    out = {"parameters": dict(values)}
    out.update(report.to_dict())
    return _clean(out)


def exit_code(report: dict) -> int:
    v8, v9 = report.get("verdict_thm8"), report.get("verdict_thm9")
    if "Error" in (v8, v9) or report.get("consistent") is False:
        return EXIT_ERROR
    if v8 is not None and v9 is not None and v8 != v9 and "Marginal" not in (v8, v9):
        return EXIT_ERROR
    if "Marginal" in (v8, v9):
        return EXIT_MARGINAL
    if v8 == "Stable":
        return EXIT_STABLE
    return EXIT_UNSTABLE


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def report_row(report: dict, param_names: list) -> dict:
    vals = [report["parameters"].get(p) for p in param_names]
    vals += [None] * (2 - len(vals))
    return {
        "p1": vals[0], "p2": vals[1],
        "lyap_cond": report.get("lyapunov_condition"),
        "r_hat": report.get("r_hat"), "r_star": report.get("r_star"),
        "verdict_thm8": report.get("verdict_thm8"), "verdict_thm9": report.get("verdict_thm9"),
        "oracle_verdict": report.get("oracle_verdict"),
        "pd_margin": report.get("pd_margin"),
        "t_total_sec": report.get("timings", {}).get("total"),
    }


def _sweep_point(args):
    cfg, values = args
    try:
        rep = run_check(cfg, values)
    except Exception as exc:  # noqa: BLE001  (per-point failures stay in the table)
        log.error("sweep point %s failed: %s", values, exc)
        rep = {"parameters": dict(values), "verdict_thm8": Verdict.ERROR.value,
               "verdict_thm9": Verdict.ERROR.value, "diagnostics": [str(exc)]}
    return rep


def run_sweep(cfg: RunConfig, workers: int = 1) -> tuple[list, list]:
    """Evaluate every grid point; returns (rows, reports) in row-major order."""
    names = [p.name for p in cfg.params]
    jobs = [(cfg, v) for v in cfg.points()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_sweep_point, jobs))
    else:
        reports = [_sweep_point(j) for j in jobs]
    return [report_row(r, names) for r in reports], reports


def to_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def to_json(payload) -> str:
    return json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n"


def emit_results(payload, path, fmt: str = "json", columns: list | None = None) -> Path:
    """Write a report (dict) or a table (list of row dicts) as UTF-8 with LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        text = to_json(payload)
    elif fmt == "csv":
        rows = payload if isinstance(payload, list) else [payload]
        text = to_csv(rows, columns or list(rows[0].keys()))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


# --- subcommands -----------------------------------------------------------


def _cmd_check(cfg, args):
    report = run_check(cfg)
    names = [p.name for p in cfg.params]
    if args.format == "csv":
        emit_results([report_row(report, names)], Path(args.out) / "check.csv", "csv", SWEEP_COLUMNS)
    else:
        emit_results(report, Path(args.out) / "report.json", "json")
    sys.stdout.write(to_json(report))
    return exit_code(report)


def _cmd_sweep(cfg, args):
    rows, reports = run_sweep(cfg, workers=args.workers)
    if args.format == "json":
        path = emit_results(reports, Path(args.out) / "sweep.json", "json")
    else:
        path = emit_results(rows, Path(args.out) / "sweep.csv", "csv", SWEEP_COLUMNS)
    sys.stdout.write(to_csv(rows, SWEEP_COLUMNS))
    log.info("wrote %s", path)
    codes = {exit_code(r) for r in reports}
    return EXIT_ERROR if EXIT_ERROR in codes else 0


def _matrix_columns(prefix, n):
    return [f"{prefix}{i}{j}" for i in range(n) for j in range(n)]


def _cmd_lyapmat(cfg, args):
    s = cfg.instantiate()
    rep = build_lyapunov_matrix(s, P=cfg.numerics.P)
    tau = np.linspace(-s.H, s.H, 2 * s.m * args.points + 1)
    U = eval_U(rep, tau).reshape(len(tau), -1)
    cols = ["tau"] + _matrix_columns("U", s.n)
    rows = [dict(zip(cols, [t, *u])) for t, u in zip(tau.tolist(), U.tolist())]
    emit_results(rows, Path(args.out) / "lyapmat.csv", "csv", cols)
    sys.stdout.write(to_json({"cond": rep.cond, "residuals": rep.residuals.as_dict()}))
    return 0


def _cmd_fundamental(cfg, args):
    s = cfg.instantiate()
    grid = compute_fundamental(s, N=cfg.numerics.N)
    K = grid.samples.reshape(len(grid.samples), -1)
    cols = ["t"] + _matrix_columns("K", s.n)
    rows = [dict(zip(cols, [t, *k])) for t, k in zip(grid.times.tolist(), K.tolist())]
    emit_results(rows, Path(args.out) / "fundamental.csv", "csv", cols)
    sys.stdout.write(to_json({"steps": len(grid.samples) - 1, "delta": grid.delta,
                              "deriv_sup": grid.deriv_sup}))
    return 0


def _cmd_oracle(cfg, args):
    s = cfg.instantiate()
    rc = count_unstable_roots(s, keep_trace=args.trace)
    out = {"root_count": rc.count, "verdict": rc.verdict, "radius": rc.radius,
           "contour_min_abs": rc.min_abs, "axis_min": imaginary_axis_scan(s)}
    if args.trace:
        rows = [{"re_s": z.real, "im_s": z.imag, "re_delta": d.real, "im_delta": d.imag}
                for z, d in rc.trace]
        emit_results(rows, Path(args.out) / "contour.csv", "csv",
                     ["re_s", "im_s", "re_delta", "im_delta"])
    sys.stdout.write(to_json(out))
    return {"Stable": EXIT_STABLE, "Unstable": EXIT_UNSTABLE}.get(rc.verdict, EXIT_MARGINAL)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", default=None, help="output directory (default: config output.dir)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--no-oracle", action="store_true", help="skip the root-count cross-check")
    common.add_argument("--format", choices=["json", "csv"], default=None)

    p = argparse.ArgumentParser(prog="delaystab", description="Finite Lyapunov-matrix stability tests "
                                "for linear systems with pointwise and distributed delays.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="verdicts for one parameter point")
    sub.add_parser("sweep", parents=[common], help="verdicts over a parameter grid")
    lm = sub.add_parser("lyapmat", parents=[common], help="sample U on [-H, H]")
    lm.add_argument("--points", type=int, default=200, help="samples per delay segment")
    sub.add_parser("fundamental", parents=[common], help="sample K on [0, H]")
    orc = sub.add_parser("oracle", parents=[common], help="characteristic root count")
    orc.add_argument("--trace", action="store_true", help="write the contour samples")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DELAYSTAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.no_oracle:
            cfg = replace(cfg, numerics=replace(cfg.numerics, oracle=False))
        args.out = args.out or cfg.out_dir
        if args.format is None:
            args.format = cfg.fmt if args.command in ("check", "sweep") else "csv"
        handler = {"check": _cmd_check, "sweep": _cmd_sweep, "lyapmat": _cmd_lyapmat,
                   "fundamental": _cmd_fundamental, "oracle": _cmd_oracle}[args.command]
        return handler(cfg, args)
    except (ConfigError, SystemValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
