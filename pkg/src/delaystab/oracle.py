"""Independent checks: characteristic roots and brute-force functional quadrature.

Nothing here uses the Lyapunov-matrix criterion itself. Root counting works
on det(s I - sum A_j e^{-s j h} - int G(theta) e^{s theta} dtheta); the
functional v1 is integrated term by term from its explicit formula.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .fundamental import FundamentalGrid, eval_K
from .lyapunov import LyapunovMatrixRep, eval_U
from .model import DelaySystem, bound_constants

AXIS_ROOT_THRESHOLD = 1e-6
CONTOUR_ZERO_THRESHOLD = 1e-8


def _phi1(z):
    """(e^z - 1) / z, with the removable singularity at 0."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-6
    out[small] = 1 + z[small] / 2 + z[small] ** 2 / 6
    zs = z[~small]
    out[~small] = np.expm1(zs) / zs
    return out


class CharFunction:
    """Delta(s) = det(s I - sum_j A_j e^{-s j h} - sum_j G_j int_seg e^{s theta})."""

    def __init__(self, sys: DelaySystem):
        self.sys = sys
        self.A = np.stack(sys.A)
        self.G = np.stack(sys.G)

    def matrix(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        sys = self.sys
        h, n, m = sys.h, sys.n, sys.m
        j = np.arange(m + 1)
        shifts = np.exp(-np.outer(s, j * h))  # (S, m+1)
        # int_{-(j+1)h}^{-jh} e^{s theta} dtheta = e^{-j h s} h phi1(-h s)
        seg = shifts[:, :m] * (h * _phi1(-h * s))[:, None]
        M = s[:, None, None] * np.eye(n)
        M = M - np.einsum("sj,jab->sab", shifts, self.A) - np.einsum("sj,jab->sab", seg, self.G)
        return M

    def __call__(self, s):
        scalar = np.ndim(s) == 0
        d = np.linalg.det(self.matrix(s))
        return d[0] if scalar else d


def _root_radius(sys, margin):
    M1 = bound_constants(sys).M1
    if margin is None:
        margin = 0.5 * M1
    R = M1 + margin
    return R if R > 0 else 1.0


@dataclass(frozen=True)
class RootCount:
    count: int | None  # None when marginal
    marginal: bool
    radius: float
    min_abs: float  # min of |Delta| / max(1, |s|)^n along the contour
    trace: tuple = ()  # (s, Delta) samples of the final contour

    @property
    def verdict(self) -> str:
        if self.marginal:
            return "Marginal"
        return "Stable" if self.count == 0 else "Unstable"


def _track(f, path, n_init=256, max_rounds=40, max_step=np.pi / 4):
    """Phase change of f along path(u), u in [0, 1], refined until each step < max_step."""
    with np.errstate(divide="ignore", invalid="ignore"):  # Delta == 0 shows up as nan phase
        return _track_inner(f, path, n_init, max_rounds, max_step)


def _track_inner(f, path, n_init, max_rounds, max_step):
    u = np.linspace(0.0, 1.0, n_init)
    vals = f(path(u))
    for _ in range(max_rounds):
        dphi = np.angle(vals[1:] / vals[:-1])
        bad = np.nonzero(np.abs(dphi) > max_step)[0]
        if bad.size == 0:
            break
        mids = 0.5 * (u[bad] + u[bad + 1])
        u = np.insert(u, bad + 1, mids)
        vals = np.insert(vals, bad + 1, f(path(mids)))
    dphi = np.angle(vals[1:] / vals[:-1])
    return u, vals, float(dphi.sum())


def count_unstable_roots(sys: DelaySystem, margin: float | None = None,
                         keep_trace: bool = False) -> RootCount:
    """Number of characteristic roots with Re s > 0 by the argument principle.

    Any such root satisfies |s| <= M1, so the contour is the boundary of the
    right half-disk of radius M1 + margin.
    """
    f = CharFunction(sys)
    n = sys.n
    R = _root_radius(sys, margin)

    def scaled_abs(s, d):
        return np.abs(d) / np.maximum(1.0, np.abs(s)) ** n

    # imaginary axis from +iR to -iR; this part does not move with the radius
    axis = lambda u: 1j * R * (1 - 2 * u)  # noqa: E731
    for attempt in range(4):
        arc = lambda u, R=R: R * np.exp(1j * np.pi * (u - 0.5))  # noqa: E731
        ua, va, pa = _track(f, arc)
        arc_min = scaled_abs(arc(ua), va).min()
        if arc_min >= CONTOUR_ZERO_THRESHOLD or attempt == 3:
            break
        R *= 1.25
    axis_local = lambda u, R=R: 1j * R * (1 - 2 * u)  # noqa: E731
    ui, vi, pi_ = _track(f, axis_local)
    axis_min = scaled_abs(axis_local(ui), vi).min()
    axis_min = min(axis_min, imaginary_axis_scan(sys, radius=R))
    min_abs = float(min(arc_min, axis_min))
    marginal = min_abs < CONTOUR_ZERO_THRESHOLD
    total = pa + pi_
    count = None if marginal else int(round(total / (2 * np.pi)))
    trace = ()
    if keep_trace:
        trace = tuple(zip(np.concatenate([arc(ua), axis_local(ui)]), np.concatenate([va, vi])))
    del axis
    return RootCount(count=count, marginal=marginal, radius=R, min_abs=min_abs, trace=trace)


def imaginary_axis_scan(sys: DelaySystem, grid_density: int = 4000,
                        radius: float | None = None) -> float:
    """min over omega in [0, R] of |Delta(i omega)|, grid search plus local refinement."""
    f = CharFunction(sys)
    R = _root_radius(sys, None) if radius is None else radius
    w = np.linspace(0.0, R, grid_density + 1)
    vals = np.abs(f(1j * w))
    best = float(vals.min())
    interior = np.nonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:]))[0] + 1
    cand = interior[np.argsort(vals[interior])[:8]]
    dw = w[1] - w[0]
    for k in cand:
        res = minimize_scalar(lambda x: abs(f(1j * x)), bounds=(max(0.0, w[k] - dw), min(R, w[k] + dw)),
                              method="bounded", options={"xatol": 1e-14})
        best = min(best, float(res.fun), _gauss_newton_axis(f, float(res.x), R))
    return best


def _gauss_newton_axis(f, x, R, iters=8):
    """Polish a minimiser of |Delta(i x)|; quadratic convergence at an exact axis root."""
    best = abs(f(1j * x))
    for _ in range(iters):
        eps = 1e-7 * max(1.0, abs(x))
        d = (f(1j * (x + eps)) - f(1j * (x - eps))) / (2 * eps)
        if d == 0:
            break
        x = min(max(x - (np.conj(d) * f(1j * x)).real / abs(d) ** 2, 0.0), R)
        best = min(best, abs(f(1j * x)))
    return float(best)


# --- functional quadrature -------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhiSamples:
    """Samples of an initial function on [-H, 0] on a uniform lattice.

    Jump points appear twice (left limit first), so trapezoid weights built
    from ``theta`` integrate each smooth piece separately. The last entry is
    phi(0).
    """

    theta: np.ndarray
    index: np.ndarray  # lattice index a, theta = -H + a * delta
    values: np.ndarray  # (len(theta), n)
    delta: float
    H: float

    def __add__(self, other: "PhiSamples") -> "PhiSamples":
        self._check(other)
        return PhiSamples(self.theta, self.index, self.values + other.values, self.delta, self.H)

    def __sub__(self, other: "PhiSamples") -> "PhiSamples":
        self._check(other)
        return PhiSamples(self.theta, self.index, self.values - other.values, self.delta, self.H)

    def __mul__(self, c: float) -> "PhiSamples":
        return PhiSamples(self.theta, self.index, c * self.values, self.delta, self.H)

    __rmul__ = __mul__

    def _check(self, other):
        if not np.array_equal(self.index, other.index):
            raise ValueError("samples live on different node sets")


def psi_r_samples(grid: FundamentalGrid, taus, gammas, breakpoints=()) -> PhiSamples:
    """psi(theta) = sum_i K(tau_i + theta) gamma_i on the grid's lattice over [-H, 0].

    Every tau_i (and extra ``breakpoints``, given as tau values) must be a
    lattice point; a node is doubled at each -tau_i since K jumps at 0.
    """
    taus = np.asarray(taus, dtype=float)
    gammas = np.asarray(gammas, dtype=float).reshape(len(taus), grid.n)
    H, d = grid.H, grid.delta
    Q = int(round(H / d))
    if np.any(taus < -1e-12) or np.any(taus > H * (1 + 1e-12)):
        raise ValueError("tau_i must lie in [0, H]")
    all_bp = np.concatenate([taus, np.asarray(breakpoints, dtype=float)])
    bp_idx = np.rint(all_bp / d)
    if np.any(np.abs(all_bp / d - bp_idx) > 1e-8):
        raise ValueError("tau_i must be multiples of the grid step")
    tau_idx = np.rint(taus / d).astype(int)
    jump_nodes = set(int(Q - b) for b in bp_idx.astype(int) if Q - b > 0)

    index, left_flag = [], []
    for a in range(Q + 1):
        if a in jump_nodes:
            index += [a, a]
            left_flag += [True, False]
        else:
            index.append(a)
            left_flag.append(False)
    index = np.array(index)
    left_flag = np.array(left_flag)
    values = np.zeros((len(index), grid.n))
    for ti, g in zip(tau_idx, gammas):
        arg = ti + index - Q  # lattice index of tau_i + theta
        Kv = eval_K(grid, np.maximum(arg, 0) * d)
        Kv[arg < 0] = 0.0
        Kv[(arg == 0) & left_flag] = 0.0
        values += Kv @ g
    theta = -H + index * d
    return PhiSamples(theta=theta, index=index, values=values, delta=d, H=H)


def _trap_weights(theta):
    w = np.zeros_like(theta)
    dt = np.diff(theta)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _cumtrap(y, d):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * d * (y[1:] + y[:-1]), axis=0)
    return out


def v1_quadrature(rep: LyapunovMatrixRep, sys: DelaySystem, phi: PhiSamples,
                  min_points: int = 1000):
    """v1(phi) = v0(phi) + int phi^T W phi by composite trapezoid on phi's lattice.

    All U values come from :func:`eval_U`; the inner kernel integrals use
    cumulative antiderivatives of U so the quadruple integral costs O(P^2).
    ``phi.values`` may carry a leading batch axis (B, P, n); the kernel
    tables are then built once and an array of B values is returned.
    """
    if len(phi.theta) < min_points:
        raise ValueError(f"need at least {min_points} samples, got {len(phi.theta)}")
    m, h, H = sys.m, sys.h, sys.H
    A, G, W = sys.A, sys.G, sys.W
    d = phi.delta
    N = int(round(h / d))
    if abs(N * d - h) > 1e-9 * h or abs(phi.H - H) > 1e-12 * H:
        raise ValueError("sample lattice must divide the delay h and span [-H, 0]")
    Q = m * N
    a = phi.index
    single = phi.values.ndim == 2
    x = phi.values[None] if single else phi.values  # (B, P, n)
    x0 = x[:, -1]
    n = sys.n

    Ulat = eval_U(rep, np.linspace(-H, H, 2 * Q + 1))
    CU = _cumtrap(Ulat, d)
    CCU = _cumtrap(CU, d)
    w = _trap_weights(phi.theta)

    total = np.einsum("za,ab,zb->z", x0, Ulat[Q], x0)

    # pointwise-delay terms, theta restricted to [-h_j, 0]
    sub = {}
    for j in range(1, m + 1):
        mask = a >= Q - j * N
        sub[j] = (mask, _trap_weights(phi.theta[mask]))
    for j in range(1, m + 1):
        mask, wj = sub[j]
        Uv = Ulat[2 * Q - j * N - a[mask]]
        total += 2 * np.einsum("za,p,pab,bc,zpc->z", x0, wj, Uv, A[j], x[:, mask])
    for k in range(1, m + 1):
        mk, wk = sub[k]
        Xk = wk[:, None] * (x[:, mk] @ A[k].T)
        for j in range(1, m + 1):
            mj, wj = sub[j]
            Xj = wj[:, None] * (x[:, mj] @ A[j].T)
            idx = a[mk][:, None] - a[mj][None, :] + (k - j) * N + Q
            total += np.einsum("zpa,pqab,zqb->z", Xk, Ulat[idx], Xj)

    alo = [Q - (s + 1) * N for s in range(m)]
    ahi = [Q - s * N for s in range(m)]
    clip = lambda z: np.clip(z, 0, 2 * Q)  # noqa: E731

    # 2 phi(0)^T int [int_{-H}^{theta} U(xi - theta) G(xi) dxi] phi(theta) dtheta
    inner = np.zeros((len(a), n, n))
    for s in range(m):
        valid = a > alo[s]
        e = np.minimum(ahi[s], a)
        blk = CU[clip(Q + e - a)] - CU[clip(Q + alo[s] - a)]
        inner += np.where(valid[:, None, None], blk @ G[s], 0.0)
    total += 2 * np.einsum("za,p,pab,zpb->z", x0, w, inner, x)

    # 2 sum_j int_{-h_j}^0 int_{-H}^0 phi(t1)^T A_j^T [int_{-H}^{t2} U(h_j+t1-t2+xi) G(xi) dxi] phi(t2)
    wx = w[:, None] * x
    for j in range(1, m + 1):
        mj, wj = sub[j]
        Xj = wj[:, None] * (x[:, mj] @ A[j].T)
        ap, aq = a[mj][:, None], a[None, :]
        acc = np.zeros((ap.shape[0], len(a), n, n))
        for s in range(m):
            valid = (aq > alo[s])[..., None, None]
            e = np.minimum(ahi[s], aq)
            base = j * N + ap - aq  # CU index of h_j + t1 - t2 is base + a_xi
            blk = CU[clip(base + e)] - CU[clip(base + alo[s])]
            acc += np.where(valid, blk @ G[s], 0.0)
        total += 2 * np.einsum("zpa,pqab,zqb->z", Xj, acc, wx)

    # int int phi(t1)^T [int^{t1} int^{t2} G^T(x1) U(t1 - t2 - x1 + x2) G(x2)] phi(t2)
    ap, aq = a[:, None], a[None, :]
    dpq = ap - aq
    acc = np.zeros((len(a), len(a), n, n))
    for s in range(m):
        e1 = np.minimum(ahi[s], ap)
        v1 = ap > alo[s]
        for t in range(m):
            e2 = np.minimum(ahi[t], aq)
            valid = (v1 & (aq > alo[t]))[..., None, None]
            c = lambda z: CCU[clip(Q + z)]  # noqa: E731
            I = (c(dpq + e2 - alo[s]) - c(dpq + e2 - e1)
                 - c(dpq + alo[t] - alo[s]) + c(dpq + alo[t] - e1))
            acc += np.where(valid, G[s].T @ I @ G[t], 0.0)
    total += np.einsum("zpa,pqab,zqb->z", wx, acc, wx)

    total += np.einsum("p,zpa,ab,zpb->z", w, x, W, x)
    return float(total[0]) if single else total


def z_bilinear(rep, sys, phi1: PhiSamples, phi2: PhiSamples, **kw) -> float:
    """Polarised form (v1(phi1 + phi2) - v1(phi1 - phi2)) / 4."""
    return 0.25 * (v1_quadrature(rep, sys, phi1 + phi2, **kw) - v1_quadrature(rep, sys, phi1 - phi2, **kw))


@dataclass(frozen=True)
class IntegralU:
    taus: np.ndarray
    U: np.ndarray  # (len(taus), n, n)
    horizon: float
    tail_bound: float


def lyapunov_integral(sys: DelaySystem, n_tau: int = 101, N: int = 50, tail_tol: float = 1e-4,
                      max_horizon: float = 2000.0) -> IntegralU:
    """U(tau) = int_0^T K(t)^T W K(t + tau) dt on [0, H] by the trapezoid rule.

    T grows until ||W|| sup_{t >= T} ||K||^2 / (2 sigma) < tail_tol, with the
    decay rate sigma fitted to log ||K|| over the last half of the horizon.
    Only meaningful for exponentially stable systems.
    """
    from .fundamental import compute_fundamental

    H, h = sys.H, sys.h
    delta = h / N
    step = max(1, (sys.m * N) // max(1, n_tau - 1))
    lags = np.arange(0, sys.m * N + 1, step)
    if lags[-1] != sys.m * N:
        lags = np.append(lags, sys.m * N)
    normW = float(np.linalg.norm(sys.W, 2))
    T = max(20.0 * H, 10.0)
    while True:
        grid = compute_fundamental(sys, N=N, horizon=T + H)
        K = grid.samples
        norms = np.linalg.norm(K, 2, axis=(1, 2))
        t = grid.times
        half = t >= T / 2
        env = np.maximum.accumulate(norms[half][::-1])[::-1]  # sup over [t, end]
        slope = np.polyfit(t[half], np.log(np.maximum(env, 1e-300)), 1)[0]
        sigma = -slope
        nT = int(round(T / delta))
        tail = normW * env[-1 - (len(t) - 1 - nT)] ** 2 / (2 * sigma) if sigma > 0 else math.inf
        if tail < tail_tol or T >= max_horizon:
            break
        T *= 2
    WK = np.einsum("ab,kbc->kac", sys.W, K)
    U = np.empty((len(lags), sys.n, sys.n))
    w = np.full(nT + 1, delta)
    w[0] = w[-1] = delta / 2
    for i, j in enumerate(lags):
        U[i] = np.einsum("k,kba,kbc->ac", w, K[:nT + 1], WK[j:j + nT + 1])
    return IntegralU(taus=lags * delta, U=U, horizon=T, tail_bound=float(tail))
