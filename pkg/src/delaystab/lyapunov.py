"""Delay Lyapunov matrix U(tau) by a semianalytic boundary-value problem.

On xi in [0, h] the unknowns are the shifted copies

    F_k(xi) = U(xi + k h),             k = -m, ..., m - 1,

and, because the kernel is constant per segment, the window integrals

    V_i(xi) = int_{xi+(i-1)h}^{xi+ih} U(u) du,   i = -m + 1, ..., m - 1.

For k >= 0 the dynamic property gives F_k' directly; for k < 0 it is applied
to U(xi + k h) = U(-xi - k h)^T. Together with V_i' = F_i - F_{i-1} this is a
constant-coefficient linear system Y' = B Y. The boundary conditions are
continuity at the joints, the jump U'(0+) - U'(0-) = -W (the algebraic
property), and V_i(0) = int_0^h F_{i-1}. Propagation is by matrix
exponential, so the only discretisation is the final cubic Hermite sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm, lu_factor, lu_solve

from .model import DelaySystem

RCOND_THRESHOLD = 1e-10
DEFAULT_THRESHOLDS = {"dynamic": 1e-6, "algebraic": 1e-6, "symmetry": 1e-8, "continuity": 1e-8}


class LyapunovConditionError(RuntimeError):
    """The boundary-value problem is singular: no unique Lyapunov matrix."""

    def __init__(self, rcond: float):
        self.rcond = rcond
        super().__init__(f"Lyapunov condition fails (BVP reciprocal condition number {rcond:.3g})")


class LyapunovConstructionError(RuntimeError):
    """The constructed U(tau) violates its defining properties."""

    def __init__(self, residuals: "PropertyResiduals", thresholds: dict):
        self.residuals = residuals
        self.thresholds = thresholds
        bad = [k for k, v in residuals.as_dict().items() if v > thresholds[k]]
        super().__init__(f"property residuals above threshold: {bad} ({residuals.as_dict()})")


@dataclass(frozen=True)
class PropertyResiduals:
    dynamic: float
    symmetry: float
    algebraic: float
    continuity: float

    def as_dict(self) -> dict:
        return {"dynamic": self.dynamic, "symmetry": self.symmetry,
                "algebraic": self.algebraic, "continuity": self.continuity}

    def passes(self, thresholds: dict | None = None) -> bool:
        thresholds = thresholds or DEFAULT_THRESHOLDS
        return all(v <= thresholds[k] for k, v in self.as_dict().items())


@dataclass(eq=False)
class LyapunovMatrixRep:
    h: float
    m: int
    P: int
    pos: np.ndarray  # (m, P+1, n, n): U(j h + xi) on the sub-grid
    dpos: np.ndarray  # matching derivatives
    neg: np.ndarray  # (m, P+1, n, n): U(xi - (m - k) h) for k = 0..m-1, from the BVP
    cond: float
    residuals: PropertyResiduals | None = None
    _bvp: tuple = field(default=None, repr=False)  # (B, Y0) for exact propagation

    @property
    def n(self) -> int:
        return self.pos.shape[-1]

    @property
    def H(self) -> float:
        return self.m * self.h


class _Layout:
    """Block indices of the stacked state Y = (F_{-m..m-1}, V_{-m+1..m-1})."""

    def __init__(self, m, n):
        self.m, self.n = m, n
        self.nblocks = 4 * m - 1
        self.dim = self.nblocks * n * n

    def F(self, k):
        return k + self.m

    def V(self, i):
        return 2 * self.m + i + self.m - 1

    def rows(self, block):
        nn = self.n * self.n
        return slice(block * nn, (block + 1) * nn)


def _operator(sys: DelaySystem, lay: _Layout) -> np.ndarray:
    m, n = sys.m, sys.n
    A, G = sys.A, sys.G
    Y = np.eye(lay.dim).reshape(lay.dim, lay.nblocks, n, n)
    out = np.zeros_like(Y)
    F = lambda k: Y[:, lay.F(k)]  # noqa: E731
    V = lambda i: Y[:, lay.V(i)]  # noqa: E731
    for k in range(-m, m):
        if k >= 0:
            d = sum(F(k - j) @ A[j] for j in range(m + 1))
            d = d + sum(V(k - j) @ G[j] for j in range(m))
        else:
            d = -sum(A[j].T @ F(k + j) for j in range(m + 1))
            d = d - sum(G[j].T @ V(k + j + 1) for j in range(m))
        out[:, lay.F(k)] = d
    for i in range(-m + 1, m):
        out[:, lay.V(i)] = F(i) - F(i - 1)
    return out.reshape(lay.dim, lay.dim).T


def _boundary_system(sys: DelaySystem):
    lay = _Layout(sys.m, sys.n)
    m, h, D = sys.m, sys.h, lay.dim
    B = _operator(sys, lay)
    aug = np.zeros((2 * D, 2 * D))
    aug[:D, :D] = B * h
    aug[:D, D:] = np.eye(D) * h
    Ea = expm(aug)
    E, Q = Ea[:D, :D], Ea[:D, D:]  # Y(h) = E Y(0), int_0^h Y = Q Y(0)
    I = np.eye(D)
    rows, rhs = [], []
    zero = np.zeros(sys.n * sys.n)
    for k in range(-m, m - 1):
        rows.append(E[lay.rows(lay.F(k))] - I[lay.rows(lay.F(k + 1))])
        rhs.append(zero)
    BE = B @ E
    rows.append(B[lay.rows(lay.F(0))] - BE[lay.rows(lay.F(-1))])
    rhs.append(-sys.W.ravel())
    for i in range(-m + 1, m):
        rows.append(I[lay.rows(lay.V(i))] - Q[lay.rows(lay.F(i - 1))])
        rhs.append(zero)
    Mbc = np.vstack(rows)
    rhs = np.concatenate(rhs)
    scale = np.abs(Mbc).max(axis=1)
    scale[scale == 0] = 1.0
    return lay, B, Mbc / scale[:, None], rhs / scale


def _rcond(M) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def build_lyapunov_matrix(sys: DelaySystem, P: int = 1000, check: bool = True,
                          thresholds: dict | None = None) -> LyapunovMatrixRep:
    """Solve for U associated with ``sys.W`` and sample it on P cells per segment.

    Raises :class:`LyapunovConditionError` when the boundary problem is
    numerically singular and, if ``check``, :class:`LyapunovConstructionError`
    when a property residual exceeds its threshold.
    """
    lay, B, Mbc, rhs = _boundary_system(sys)
    rc = _rcond(Mbc)
    if rc < RCOND_THRESHOLD:
        raise LyapunovConditionError(rc)
    Y0 = lu_solve(lu_factor(Mbc), rhs)

    m, n, h = sys.m, sys.n, sys.h
    step = expm(B * (h / P))
    Ys = np.empty((P + 1, lay.dim))
    Ys[0] = Y0
    for k in range(P):
        Ys[k + 1] = step @ Ys[k]
    dYs = Ys @ B.T
    Ys = Ys.reshape(P + 1, lay.nblocks, n, n)
    dYs = dYs.reshape(P + 1, lay.nblocks, n, n)
    pos = np.stack([Ys[:, lay.F(k)] for k in range(m)])
    dpos = np.stack([dYs[:, lay.F(k)] for k in range(m)])
    neg = np.stack([Ys[:, lay.F(k)] for k in range(-m, 0)])
    rep = LyapunovMatrixRep(h=h, m=m, P=P, pos=pos, dpos=dpos, neg=neg, cond=1.0 / rc,
                            _bvp=(B, Y0))
    if check:
        rep.residuals = property_residuals(rep, sys)
        thr = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
        if not rep.residuals.passes(thr):
            raise LyapunovConstructionError(rep.residuals, thr)
    return rep


def eval_U(rep: LyapunovMatrixRep, tau):
    """U(tau) for |tau| <= H; negative arguments use U(-tau)^T.

    Scalar input gives an n x n matrix, array input a stack.
    """
    t = np.asarray(tau, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    H = rep.H
    if np.any(np.abs(t) > H * (1 + 1e-12)):
        raise ValueError(f"|tau| must be <= H = {H:g}")
    a = np.minimum(np.abs(t), H)
    seg = np.minimum((a / rep.h).astype(int), rep.m - 1)
    xi = a - seg * rep.h
    dx = rep.h / rep.P
    cell = np.clip((xi / dx).astype(int), 0, rep.P - 1)
    s = ((xi - cell * dx) / dx)[:, None, None]
    y0, y1 = rep.pos[seg, cell], rep.pos[seg, cell + 1]
    d0, d1 = rep.dpos[seg, cell], rep.dpos[seg, cell + 1]
    s2, s3 = s * s, s * s * s
    val = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * dx * d0
           + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * dx * d1)
    negative = t < 0
    val[negative] = np.swapaxes(val[negative], 1, 2)
    return val[0] if scalar else val


def eval_U_exact(rep: LyapunovMatrixRep, tau: float) -> np.ndarray:
    """U(tau) by direct propagation of the BVP solution (no interpolation)."""
    B, Y0 = rep._bvp
    n, m = rep.n, rep.m
    a = abs(tau)
    seg = min(int(a / rep.h), m - 1)
    Y = expm(B * (a - seg * rep.h)) @ Y0
    blk = Y.reshape(4 * m - 1, n, n)[seg + m]
    return blk.T if tau < 0 else blk


_GL_X, _GL_W = leggauss(24)


def _window_integral(rep, lo, hi):
    """int_lo^hi U(u) du for arrays lo < hi, split at the kinks of U."""
    h, H = rep.h, rep.H
    knots = np.arange(-rep.m, rep.m + 1) * h
    out = np.zeros((len(lo), rep.n, rep.n))
    for idx in range(len(lo)):
        pts = np.concatenate(([lo[idx]], knots[(knots > lo[idx]) & (knots < hi[idx])], [hi[idx]]))
        a, b = pts[:-1], pts[1:]
        x = (0.5 * (b - a))[:, None] * _GL_X[None, :] + (0.5 * (a + b))[:, None]
        w = (0.5 * (b - a))[:, None] * _GL_W[None, :]
        vals = eval_U(rep, np.clip(x.ravel(), -H, H))
        out[idx] = np.tensordot(w.ravel(), vals, axes=1)
    return out


def property_residuals(rep: LyapunovMatrixRep, sys: DelaySystem, npts: int = 1000) -> PropertyResiduals:
    """Sup-norm defects of the dynamic, symmetry, algebraic and continuity properties."""
    m, h, H = sys.m, sys.h, sys.H
    A, G = sys.A, sys.G
    nrm = lambda X: np.linalg.norm(X, 2, axis=(-2, -1))  # noqa: E731

    tau = (np.arange(npts) + 0.5) * (H / npts)
    eps = 1e-4 * h
    dU = (eval_U(rep, tau + eps) - eval_U(rep, tau - eps)) / (2 * eps)
    rhs = sum(eval_U(rep, tau - j * h) @ A[j] for j in range(m + 1))
    for j in range(m):
        rhs = rhs + _window_integral(rep, tau - (j + 1) * h, tau - j * h) @ G[j]
    dynamic = float(nrm(dU - rhs).max())

    alg = sys.W.copy()
    for j in range(m + 1):
        Uj = eval_U(rep, -j * h)
        alg = alg + A[j].T @ Uj.T + Uj @ A[j]
    for j in range(m):
        Ij = _window_integral(rep, np.array([-(j + 1) * h]), np.array([-j * h]))[0]
        alg = alg + G[j].T @ Ij.T + Ij @ G[j]
    algebraic = float(np.linalg.norm(alg, 2))

    # U(xi + k h) from the k >= 0 branch vs U(-(xi + k h))^T from the k < 0 branch
    sym = nrm(rep.pos[:, :, :, :] - np.swapaxes(rep.neg[::-1, ::-1], -2, -1)).max()
    U0 = rep.pos[0, 0]
    symmetry = float(max(sym, np.linalg.norm(U0 - U0.T, 2)))

    chain = np.concatenate([rep.neg, rep.pos])  # segments ordered from -H to H
    continuity = float(nrm(chain[:-1, -1] - chain[1:, 0]).max())
    return PropertyResiduals(dynamic=dynamic, symmetry=symmetry, algebraic=algebraic,
                             continuity=continuity)


@dataclass(frozen=True)
class LyapunovCondition:
    holds: bool
    cond: float
    axis_min: float | None = None  # min |det| along the imaginary axis (oracle)
    agrees: bool | None = None


def lyapunov_condition(sys: DelaySystem, cross_check: bool = True) -> LyapunovCondition:
    """Nonsingularity of the boundary problem, cross-checked on the imaginary axis."""
    _, _, Mbc, _ = _boundary_system(sys)
    rc = _rcond(Mbc)
    holds = rc >= RCOND_THRESHOLD
    cond = math.inf if rc == 0 else 1.0 / rc
    if not cross_check:
        return LyapunovCondition(holds=holds, cond=cond)
    from .oracle import AXIS_ROOT_THRESHOLD, imaginary_axis_scan

    axis_min = imaginary_axis_scan(sys)
    axis_root = axis_min < AXIS_ROOT_THRESHOLD
    # an axis root always breaks the condition; the converse need not hold
    agrees = not (holds and axis_root)
    return LyapunovCondition(holds=holds, cond=cond, axis_min=axis_min, agrees=agrees)


def nu_bound(rep: LyapunovMatrixRep, density: int = 1000) -> float:
    """max ||U(tau)|| over a grid of ``density`` points per segment on [0, H]."""
    tau = np.linspace(0.0, rep.H, rep.m * density + 1)
    return float(np.linalg.norm(eval_U(rep, tau), 2, axis=(1, 2)).max())
