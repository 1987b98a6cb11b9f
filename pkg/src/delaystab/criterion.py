"""Finite positivity tests on the Lyapunov matrix and the resulting verdicts."""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh, lapack

from .bounds import compute_bounds
from .fundamental import FundamentalBoundError, FundamentalGrid, compute_fundamental, eval_K
from .lyapunov import (LyapunovConditionError, LyapunovConstructionError, LyapunovMatrixRep,
                       build_lyapunov_matrix, eval_U, lyapunov_condition, nu_bound)
from .model import DelaySystem

log = logging.getLogger(__name__)

PD_TOL = 1e-10
DENSE_EIG_LIMIT = 4500  # above this size the margin is a Cholesky pivot
SUBGRID_LIMIT = 6000  # non-PD certification on nested sub-grids up to this size
MAX_DENSE = 20000  # largest test matrix dimension factored densely (about 3.2 GB)


class OrderTooLargeError(RuntimeError):
    """The dense test matrix for this order does not fit the memory budget."""

    def __init__(self, r: int, size: int, limit: int, passed_subgrid: int | None):
        self.r, self.size, self.limit, self.passed_subgrid = r, size, limit, passed_subgrid
        msg = f"order {r} needs a {size} x {size} matrix (budget {limit})"
        if passed_subgrid:
            msg += f"; the nested order {passed_subgrid} test passed, which is necessary only"
        super().__init__(msg)


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    LYAPUNOV_CONDITION_FAILS = "LyapunovConditionFails"
    MARGINAL = "Marginal"
    ERROR = "Error"

    def __str__(self):
        return self.value


# --- assembly --------------------------------------------------------------


def _grid_taus(H: float, r: int) -> np.ndarray:
    taus = np.arange(r) * (H / (r - 1))
    taus[-1] = H
    return taus


def _upper_Kr(rep: LyapunovMatrixRep, r: int) -> np.ndarray:
    """K_r with only the upper block triangle (and full diagonal blocks) filled."""
    n = rep.n
    if r == 1:
        U0 = eval_U(rep, 0.0)
        return 0.5 * (U0 + U0.T)
    blocks = eval_U(rep, _grid_taus(rep.H, r))
    blocks[0] = 0.5 * (blocks[0] + blocks[0].T)
    row0 = np.concatenate(list(blocks), axis=1)
    del blocks
    X = np.zeros((n * r, n * r))
    for i in range(r):
        X[i * n:(i + 1) * n, i * n:] = row0[:, :(r - i) * n]
    return X


def _subtract_PtP_upper(X: np.ndarray, Pr: np.ndarray, alpha0: float) -> None:
    n = Pr.shape[0]
    r = Pr.shape[1] // n
    for i in range(r):
        blk = Pr[:, i * n:(i + 1) * n]
        X[i * n:(i + 1) * n, i * n:] -= alpha0 * (blk.T @ Pr[:, i * n:])


def _mirror_upper(X: np.ndarray) -> np.ndarray:
    iu = np.triu_indices_from(X, 1)
    X[(iu[1], iu[0])] = X[iu]
    return X


def assemble_Kr(rep: LyapunovMatrixRep, r: int) -> np.ndarray:
    """Block-Toeplitz matrix [U((j - i) H / (r - 1))]_{i,j}; U(0) when r = 1.

    Lower blocks are filled as transposes of the upper ones, so the result is
    exactly symmetric.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    return _mirror_upper(_upper_Kr(rep, r))


def assemble_Pr(grid: FundamentalGrid, r: int) -> np.ndarray:
    """Block row (K(tau_0), ..., K(tau_{r-1})) on the same grid as K_r."""
    if r == 1:
        return eval_K(grid, 0.0)
    return np.concatenate(list(eval_K(grid, _grid_taus(grid.H, r))), axis=1)


def assemble_test_matrix(rep: LyapunovMatrixRep, r: int, alpha0: float = 0.0,
                         grid: FundamentalGrid | None = None) -> np.ndarray:
    """K_r - alpha0 P_r^T P_r, full and symmetric."""
    X = _upper_Kr(rep, r) if r > 1 else assemble_Kr(rep, 1)
    if alpha0:
        if grid is None:
            raise ValueError("alpha0 > 0 needs a fundamental-matrix grid")
        _subtract_PtP_upper(X, assemble_Pr(grid, r), alpha0)
    return _mirror_upper(X)


# --- definiteness ----------------------------------------------------------


@dataclass(frozen=True)
class PDResult:
    pd: bool
    margin: float
    marginal: bool
    margin_kind: str = "eigenvalue"  # or "pivot" when only the failing Cholesky pivot is known
    size: int = 0


def _classify(chol_ok: bool, margin: float, scale: float, tol: float, kind: str, size: int) -> PDResult:
    thr = tol * scale
    marginal = abs(margin) <= thr
    return PDResult(pd=bool(chol_ok and margin > thr), margin=float(margin), marginal=bool(marginal),
                    margin_kind=kind, size=size)


def _pd_upper(X: np.ndarray, tol: float) -> PDResult:
    """Definiteness of the symmetric matrix stored in the upper triangle of X.

    X is overwritten by the Cholesky factor when it is large.
    """
    N = X.shape[0]
    scale = float(np.max(np.abs(np.diag(X)))) or 1.0
    if N <= DENSE_EIG_LIMIT:
        lam = float(eigh(X, lower=False, eigvals_only=True, subset_by_index=[0, 0], driver="evr")[0])
        _, info = lapack.dpotrf(X, lower=0, clean=0, overwrite_a=0)
        return _classify(info == 0, lam, scale, tol, "eigenvalue", N)
    # X.T is Fortran ordered and its lower triangle is X's upper triangle
    c, info = lapack.dpotrf(X.T, lower=1, clean=0, overwrite_a=1)
    if info < 0:
        raise RuntimeError(f"dpotrf argument error {info}")
    if info > 0:
        # the failing diagonal entry keeps its non-positive Schur complement
        return _classify(False, float(c[info - 1, info - 1]), scale, tol, "pivot", N)
    return _classify(True, float(np.min(np.diag(c)) ** 2), scale, tol, "pivot", N)


def is_positive_definite(Msym, tol: float = PD_TOL) -> PDResult:
    """Cholesky-based definiteness test with a margin.

    The margin is the smallest eigenvalue up to DENSE_EIG_LIMIT rows and a
    Cholesky pivot (smallest one, or the failing one) above it.

    ``marginal`` is set when |margin| <= tol * max|diag|; such verdicts
    depend on discretisation error and should be refined.
    """
    M = np.array(Msym, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > 1e-8 * max(1.0, float(np.max(np.abs(M)))):
        raise ValueError(f"matrix not symmetric (max asymmetry {asym:.3g})")
    return _pd_upper(M, tol)


def _nested_subgrids(r: int, n: int) -> list:
    """Orders r' < r with (r' - 1) | (r - 1) and n r' <= SUBGRID_LIMIT, roughly doubling."""
    cands = set()
    for d in range(1, int(math.isqrt(r - 1)) + 1):
        if (r - 1) % d == 0:
            cands.update((d + 1, (r - 1) // d + 1))
    cands = sorted(c for c in cands if 2 <= c < r and n * c <= SUBGRID_LIMIT)
    if not cands:
        return []
    chain = [cands[-1]]
    for c in reversed(cands[:-1]):
        if 2 * c <= chain[-1]:
            chain.append(c)
    return chain[::-1]


@dataclass(frozen=True)
class OrderTest:
    r: int
    result: PDResult
    tested_r: int  # order of the matrix actually factored
    t_assemble: float
    t_pd: float


def check_order(rep: LyapunovMatrixRep, r: int, alpha0: float = 0.0, grid: FundamentalGrid | None = None,
                tol: float = PD_TOL, subgrid: bool = True, max_dense: int = MAX_DENSE) -> OrderTest:
    """PD test of K_r - alpha0 P_r^T P_r.

    For large r a nested sub-grid is tried first: its matrix is a principal
    submatrix of the full one, so a failure there is a failure of the full
    test. Otherwise the full matrix is factored, provided its dimension is
    at most ``max_dense``; larger orders raise :class:`OrderTooLargeError`.
    """
    n = rep.n
    passed = None
    if subgrid and n * r > SUBGRID_LIMIT:
        for rp in _nested_subgrids(r, n):
            sub = check_order(rep, rp, alpha0, grid, tol, subgrid=False, max_dense=max_dense)
            if not sub.result.pd and not sub.result.marginal:
                return OrderTest(r=r, result=sub.result, tested_r=rp,
                                 t_assemble=sub.t_assemble, t_pd=sub.t_pd)
            passed = rp
    if n * r > max_dense:
        raise OrderTooLargeError(r, n * r, max_dense, passed)
    t0 = time.perf_counter()
    X = _upper_Kr(rep, r) if r > 1 else assemble_Kr(rep, 1)
    if alpha0:
        if grid is None:
            raise ValueError("alpha0 > 0 needs a fundamental-matrix grid")
        _subtract_PtP_upper(X, assemble_Pr(grid, r), alpha0)
    t1 = time.perf_counter()
    res = _pd_upper(X, tol)
    del X
    return OrderTest(r=r, result=res, tested_r=r, t_assemble=t1 - t0, t_pd=time.perf_counter() - t1)


def find_instability_witness(rep: LyapunovMatrixRep, r_max: int, alpha0: float = 0.0,
                             grid: FundamentalGrid | None = None, tol: float = PD_TOL) -> int | None:
    """Smallest tested r in [2, r_max] whose test matrix is not positive definite.

    r - 1 is doubled (1, 2, 4, ...) until a failure, then bisected between the
    last passing and first failing order. Every returned value was tested.
    """
    if r_max < 2:
        raise ValueError("r_max must be >= 2")

    def fails(r):
        return not check_order(rep, r, alpha0, grid, tol, subgrid=False).result.pd

    lo, k = 1, 1  # lo: largest order known to pass (1 is never tested)
    hi = None
    while True:
        r = min(k + 1, r_max)
        if fails(r):
            hi = r
            break
        lo = r
        if r == r_max:
            return None
        k *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid < 2:
            break
        if fails(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --- pipeline --------------------------------------------------------------


@dataclass
class Numerics:
    N: int = 1000  # fundamental-matrix steps per delay segment
    P: int = 1000  # Lyapunov-matrix samples per segment
    pd_tol: float = PD_TOL
    alpha0_fraction: float = 0.5
    oracle: bool = True
    witness: bool = False
    subgrid: bool = True
    max_dense: int = MAX_DENSE


@dataclass
class StabilityReport:
    lyapunov_condition: bool | None = None
    lyapunov_cond_number: float | None = None
    r_hat: int | None = None
    r_star: int | None = None
    verdict_thm8: Verdict | None = None
    verdict_thm9: Verdict | None = None
    pd_margin: float | None = None
    pd_margin_kind: str | None = None
    tested_r_thm8: int | None = None
    pd_margin_thm9: float | None = None
    tested_r_thm9: int | None = None
    witness_r: int | None = None
    oracle_verdict: str | None = None
    oracle_root_count: int | None = None
    axis_min: float | None = None
    consistent: bool | None = None
    bounds: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("verdict_thm8", "verdict_thm9"):
            if d[k] is not None:
                d[k] = str(d[k])
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def _pd_verdict(res: PDResult) -> Verdict:
    if res.marginal:
        return Verdict.MARGINAL
    return Verdict.STABLE if res.pd else Verdict.UNSTABLE


def _consistent(v: Verdict | None, oracle: str | None) -> bool | None:
    if v is None or oracle is None or v in (Verdict.MARGINAL, Verdict.ERROR):
        return None
    return (v == Verdict.STABLE) == (oracle == "Stable")


def analyze(sys: DelaySystem, numerics: Numerics | None = None, thm8: bool = True,
            thm9: bool = True) -> StabilityReport:
    """Full pipeline: Lyapunov condition, U, bounds, the requested tests, oracle."""
    from .oracle import count_unstable_roots

    num = numerics or Numerics()
    rep_out = StabilityReport()
    tm = rep_out.timings
    t_start = time.perf_counter()

    def tick(name, t0):
        tm[name] = tm.get(name, 0.0) + time.perf_counter() - t0

    if num.oracle:
        t0 = time.perf_counter()
        rc = count_unstable_roots(sys)
        rep_out.oracle_verdict = rc.verdict
        rep_out.oracle_root_count = rc.count
        tick("oracle", t0)

    try:
        t0 = time.perf_counter()
        cond = lyapunov_condition(sys, cross_check=num.oracle)
        rep_out.lyapunov_condition = cond.holds
        rep_out.lyapunov_cond_number = cond.cond
        rep_out.axis_min = cond.axis_min
        if cond.agrees is False:
            rep_out.diagnostics.append("boundary problem solvable although the imaginary-axis scan "
                                       "found a probable root")
        tick("lyapunov_condition", t0)
        if not cond.holds:
            rep_out.verdict_thm8 = Verdict.LYAPUNOV_CONDITION_FAILS if thm8 else None
            rep_out.verdict_thm9 = Verdict.LYAPUNOV_CONDITION_FAILS if thm9 else None
            rep_out.consistent = None if rep_out.oracle_verdict is None else rep_out.oracle_verdict != "Stable"
            tm["total"] = time.perf_counter() - t_start
            return rep_out

        t0 = time.perf_counter()
        rep = build_lyapunov_matrix(sys, P=num.P)
        rep_out.residuals = rep.residuals.as_dict()
        tick("lyapunov_matrix", t0)

        t0 = time.perf_counter()
        bs = compute_bounds(sys, nu_bound(rep), num.alpha0_fraction)
        rep_out.bounds = bs.as_dict()
        rep_out.diagnostics += bs.notes
        rep_out.r_hat, rep_out.r_star = bs.r_hat, bs.r_star
        tick("bounds", t0)

        def run(label, r, alpha0=0.0, grid=None):
            try:
                ot = check_order(rep, r, alpha0=alpha0, grid=grid, tol=num.pd_tol,
                                 subgrid=num.subgrid, max_dense=num.max_dense)
            except (OrderTooLargeError, MemoryError) as exc:
                rep_out.diagnostics.append(f"{label}: {type(exc).__name__}: {exc}")
                return Verdict.ERROR, None
            tm[f"assemble_{label}"], tm[f"pd_{label}"] = ot.t_assemble, ot.t_pd
            if ot.result.marginal:
                rep_out.diagnostics.append(f"{label}: margin within tolerance; refine N and P")
            return _pd_verdict(ot.result), ot

        if thm8:
            rep_out.verdict_thm8, ot = run("thm8", bs.r_hat)
            if ot is not None:
                rep_out.pd_margin = ot.result.margin
                rep_out.pd_margin_kind = ot.result.margin_kind
                rep_out.tested_r_thm8 = ot.tested_r

        if thm9:
            grid = None
            if bs.alpha0:
                t0 = time.perf_counter()
                grid = compute_fundamental(sys, N=num.N)
                tick("fundamental", t0)
            rep_out.verdict_thm9, ot9 = run("thm9", bs.r_star, bs.alpha0, grid)
            if ot9 is not None:
                rep_out.pd_margin_thm9 = ot9.result.margin
                rep_out.tested_r_thm9 = ot9.tested_r
                if not thm8:
                    rep_out.pd_margin = ot9.result.margin
                    rep_out.pd_margin_kind = ot9.result.margin_kind

        if num.witness and rep_out.verdict_thm8 == Verdict.UNSTABLE:
            t0 = time.perf_counter()
            rep_out.witness_r = find_instability_witness(rep, bs.r_hat, tol=num.pd_tol)
            tick("witness", t0)
    except (LyapunovConditionError, LyapunovConstructionError, FundamentalBoundError,
            ValueError, np.linalg.LinAlgError) as exc:
        rep_out.diagnostics.append(f"{type(exc).__name__}: {exc}")
        if thm8 and rep_out.verdict_thm8 is None:
            rep_out.verdict_thm8 = Verdict.ERROR
        if thm9 and rep_out.verdict_thm9 is None:
            rep_out.verdict_thm9 = Verdict.ERROR

    checks = [_consistent(v, rep_out.oracle_verdict) for v in (rep_out.verdict_thm8, rep_out.verdict_thm9)]
    checks = [c for c in checks if c is not None]
    if checks:
        rep_out.consistent = all(checks)
        if not rep_out.consistent:
            log.error("criterion verdicts %s/%s disagree with the root count (%s)",
                      rep_out.verdict_thm8, rep_out.verdict_thm9, rep_out.oracle_verdict)
    tm["total"] = time.perf_counter() - t_start
    return rep_out


def stability_test_thm8(sys: DelaySystem, numerics: Numerics | None = None) -> StabilityReport:
    """Stable iff the Lyapunov condition holds and K_{r_hat} > 0."""
    return analyze(sys, numerics, thm8=True, thm9=False)


def stability_test_thm9(sys: DelaySystem, numerics: Numerics | None = None) -> StabilityReport:
    """Stable iff the Lyapunov condition holds and K_{r*} - alpha0 P^T P > 0."""
    return analyze(sys, numerics, thm8=False, thm9=True)
