"""Fundamental matrix K(t) by the method of steps.

The kernel integrals are carried as extra states

    I_s(t) = int_{t-(s+1)h}^{t-sh} K(u) du,   I_s' = K(t - s h) - K(t - (s+1) h),

so the only approximation is the classical RK4 step. With delta = h / N every
delayed argument at a step boundary is a grid node; half-step values come from
the cubic Hermite interpolant of the already computed step (K and its one-sided
derivatives), which keeps the scheme fourth order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DelaySystem, bound_constants


class FundamentalBoundError(RuntimeError):
    """The computed K(t) exceeded the a-priori growth bound."""


@dataclass(frozen=True, eq=False)
class FundamentalGrid:
    delta: float
    N: int  # steps per delay segment
    h: float
    m: int
    samples: np.ndarray  # (steps + 1, n, n), samples[k] = K(k delta)
    deriv_start: np.ndarray  # (steps, n, n), right-limit K' at the start of step k
    deriv_end: np.ndarray  # (steps, n, n), left-limit K' at the end of step k
    deriv_sup: float  # sup ||K'|| on [0, H]
    form: str = "pre"

    @property
    def H(self) -> float:
        return self.m * self.h

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def horizon(self) -> float:
        return self.delta * (len(self.samples) - 1)

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(len(self.samples))


def compute_fundamental(sys: DelaySystem, N: int = 200, horizon: float | None = None,
                        form: str = "pre", bound_tol: float = 1e-6) -> FundamentalGrid:
    """Integrate K' = sum A_j K(t - jh) + int G K on [0, horizon] (default H).

    ``form="post"`` integrates the right-multiplied equation
    K' = sum K(t - jh) A_j + int K G instead; both have the same solution.
    """
    if N < 4:
        raise ValueError(f"N must be >= 4, got {N}")
    if form not in ("pre", "post"):
        raise ValueError("form must be 'pre' or 'post'")
    n, m, h = sys.n, sys.m, sys.h
    delta = h / N
    horizon = sys.H if horizon is None else horizon
    steps = int(math.ceil(horizon / delta - 1e-9))
    A, G = sys.A, sys.G

    if form == "pre":
        mul = lambda C, X: C @ X  # noqa: E731
    else:
        mul = lambda C, X: X @ C  # noqa: E731

    K = np.zeros((steps + 1, n, n))
    D0 = np.zeros((steps, n, n))
    D1 = np.zeros((steps, n, n))
    K[0] = np.eye(n)
    zero = np.zeros((n, n))

    def delayed(k, lag_steps, c):
        # K(t_k + c*delta - lag), lag = lag_steps*delta >= h, taken inside past step p
        p = k - lag_steps
        if p < 0:
            return zero
        if c == 0:
            return K[p]
        if c == 1:
            return K[p + 1]
        return 0.5 * (K[p] + K[p + 1]) + (delta / 8.0) * (D0[p] - D1[p])

    def rhs(k, c, Kc, I):
        lagged = [Kc] + [delayed(k, j * N, c) for j in range(1, m + 1)]
        dK = sum(mul(A[j], lagged[j]) for j in range(m + 1))
        for s in range(m):
            dK = dK + mul(G[s], I[s])
        dI = lagged[:m]
        dI = np.stack([dI[s] - lagged[s + 1] for s in range(m)])
        return dK, dI

    I = np.zeros((m, n, n))
    for k in range(steps):
        y = K[k]
        a1, b1 = rhs(k, 0, y, I)
        a2, b2 = rhs(k, 0.5, y + 0.5 * delta * a1, I + 0.5 * delta * b1)
        a3, b3 = rhs(k, 0.5, y + 0.5 * delta * a2, I + 0.5 * delta * b2)
        a4, b4 = rhs(k, 1, y + delta * a3, I + delta * b3)
        D0[k] = a1
        K[k + 1] = y + (delta / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        I = I + (delta / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        D1[k], _ = rhs(k, 1, K[k + 1], I)

    M1 = bound_constants(sys).M1
    norms = np.linalg.norm(K, 2, axis=(1, 2))
    limit = np.exp(M1 * delta * np.arange(steps + 1)) * (1 + bound_tol)
    bad = np.nonzero(norms > limit)[0]
    if bad.size:
        k = int(bad[0])
        raise FundamentalBoundError(
            f"||K({k * delta:g})|| = {norms[k]:.6g} exceeds exp(M1 t) = {limit[k]:.6g}"
        )

    nH = min(steps, m * N)
    if nH:
        dsup = max(np.linalg.norm(D0[:nH], 2, axis=(1, 2)).max(),
                   np.linalg.norm(D1[:nH], 2, axis=(1, 2)).max())
    else:
        dsup = 0.0
    return FundamentalGrid(delta=delta, N=N, h=h, m=m, samples=K, deriv_start=D0,
                           deriv_end=D1, deriv_sup=float(dsup), form=form)


def eval_K(grid: FundamentalGrid, t):
    """K(t): zero for t < 0, grid lookup at nodes, linear interpolation between.

    Accepts a scalar (returns an n x n matrix) or an array of times (returns a
    stack).
    """
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if np.any(t_arr > grid.horizon * (1 + 1e-12)):
        raise ValueError(f"t > {grid.horizon:g} is outside the computed grid")
    n = grid.n
    out = np.zeros((t_arr.size, n, n))
    pos = t_arr >= 0
    x = t_arr[pos] / grid.delta
    k = np.rint(x)
    on_node = np.abs(x - k) <= 1e-9 * np.maximum(1.0, x)
    last = len(grid.samples) - 1
    kk = np.clip(k.astype(int), 0, last)
    lo = np.clip(np.floor(x).astype(int), 0, last - 1) if last > 0 else np.zeros_like(kk)
    frac = (x - lo)[:, None, None]
    interp = (1 - frac) * grid.samples[lo] + frac * grid.samples[np.minimum(lo + 1, last)]
    vals = np.where(on_node[:, None, None], grid.samples[kk], interp)
    out[pos] = vals
    return out[0] if scalar else out


def assemble_P(grid: FundamentalGrid, r: int) -> np.ndarray:
    """Block row (I, K(d), ..., K((r-1) d)) with d = H / (r - 1)."""
    if r < 2:
        raise ValueError(f"r must be >= 2, got {r}")
    taus = np.arange(r) * (grid.H / (r - 1))
    taus[-1] = grid.H
    blocks = eval_K(grid, taus)
    return np.concatenate(list(blocks), axis=1)
