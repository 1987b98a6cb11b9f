"""Scalar constants behind the finite orders r_hat and r_star."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.linalg import eigh

from .model import BoundSet, DelaySystem, bound_constants, spectral_norm


def _g(b: float, x: float) -> float:
    # sin^4(b) (x^2 + b^2) - x^2 without cancellation near pi/2
    s2 = math.sin(b) ** 2
    return s2 * s2 * b * b - math.cos(b) ** 2 * (1 + s2) * x * x


def solve_b1(H: float, M1: float, tol: float = 1e-12) -> float:
    """Root in (0, pi/2) of sin^4(b) ((H M1)^2 + b^2) = (H M1)^2, by bisection.

    g < 0 near 0 and g(pi/2) = pi^2/4 > 0, and g is increasing on the
    bracket, so the root is unique.
    """
    x = H * M1
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"H * M1 must be positive and finite, got {x}")
    lo, hi = 0.0, math.pi / 2
    while True:
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol and abs(_g(mid, x)) <= 1e-10 or not lo < mid < hi:
            break
        if _g(mid, x) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def alpha1(W, M1: float, H: float, b1: float) -> float:
    if not M1 > 0:
        raise ValueError("M1 must be positive")
    lam = float(np.linalg.eigvalsh(np.asarray(W, dtype=float))[0])
    return lam / (4 * M1) * math.exp(-2 * M1 * H) * math.cos(b1) ** 2


def _p1_blocks(sys: DelaySystem):
    n, m, H, W = sys.n, sys.m, sys.H, sys.W
    e1 = np.zeros((m + 1, m + 1))
    e1[0, 0] = 1.0
    Arow = np.hstack(sys.A)  # n x n(m+1)
    E = np.zeros((n * (m + 1), n))
    E[:n] = np.eye(n)
    D = np.kron(np.eye(m + 1), W) - np.kron(e1, W) / sys.eta
    S = E @ Arow + Arow.T @ E.T - H * np.kron(e1, np.eye(n))
    return D, S


def lambda_min_p1(sys: DelaySystem) -> float:
    """Smallest eigenvalue of D^{-1} S.

    D is symmetric positive definite, so D^{-1} S is similar to a symmetric
    matrix and its spectrum is real; it is the generalized spectrum of (S, D).
    """
    D, S = _p1_blocks(sys)
    return float(eigh(S, D, eigvals_only=True)[0])


def lambda_max_p2(sys: DelaySystem) -> float:
    """max over kernel segments of lambda_max(W^{-1} G_j^T G_j)."""
    best = 0.0
    for Gj in sys.G:
        if not np.any(Gj):
            continue
        best = max(best, float(eigh(Gj.T @ Gj, sys.W, eigvals_only=True)[-1]))
    return best


def alpha0_star(sys: DelaySystem, notes: list | None = None) -> float:
    """Largest alpha0 keeping both quadratic-form remainders nonnegative.

    Returns min(-1 / ((m+1) lambda_min(P1)), 1 / (eta H (m+1) lambda_max(P2)));
    the second branch is +inf when the kernel vanishes. A nonnegative
    lambda_min(P1) leaves no valid positive value; 0 is returned with a note.
    """
    m, H = sys.m, sys.H
    lam1 = lambda_min_p1(sys)
    # rounding-level negatives would give an absurdly large alpha0*
    scale = max(1.0, float(np.abs(_p1_blocks(sys)[1]).max()))
    if lam1 < -1e-12 * scale:
        a01 = -1.0 / ((m + 1) * lam1)
    else:
        a01 = -math.inf
    lam2 = lambda_max_p2(sys)
    a02 = math.inf if lam2 == 0 else 1.0 / (sys.eta * H * (m + 1) * lam2)
    val = min(a01, a02)
    if not (math.isfinite(val) and val >= 0):
        msg = f"alpha0* formula gave {val} (lambda_min(P1) = {lam1:.6g}); using alpha0 = 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        if notes is not None:
            notes.append(msg)
        return 0.0
    return val


def alpha2(nu: float, sys: DelaySystem, bounds: BoundSet) -> float:
    h, H, b = sys.h, sys.H, bounds.b
    N1 = sum(spectral_norm(a) * j * h for j, a in enumerate(sys.A) if j >= 1)
    normW = spectral_norm(sys.W)
    return (nu * (1 + N1) ** 2 + b * nu * H ** 2 * (1 + N1)
            + 0.25 * b * b * nu * H ** 2 + H * normW)


def _order(ratio: float, L: float, M1: float, H: float) -> int:
    log_b = L * H + math.log(H * (M1 + L) * (ratio + math.sqrt(ratio * (ratio + 1))) or 1e-300)
    if not log_b < 700.0:
        raise ValueError(f"order bound exp({log_b:.4g}) is not representable")
    bracket = math.exp(log_b)
    return max(2, 1 + math.ceil(bracket - L * H))


def r_hat(bounds: BoundSet, H: float) -> int:
    if not (bounds.alpha1 and bounds.alpha1 > 0):
        raise ValueError("alpha1 must be positive")
    return _order(bounds.alpha2 / bounds.alpha1, bounds.L, bounds.M1, H)


def r_star(bounds: BoundSet, H: float) -> int:
    denom = bounds.alpha1 + (bounds.alpha0 or 0.0)
    if not denom > 0:
        raise ValueError("alpha1 + alpha0 must be positive")
    return _order(bounds.alpha2 / denom, bounds.L, bounds.M1, H)


def compute_bounds(sys: DelaySystem, nu: float, alpha0_fraction: float = 0.5) -> BoundSet:
    """Every constant from the system and nu = max ||U|| on [0, H].

    alpha0 = alpha0_fraction * alpha0*; the necessity argument needs alpha0
    strictly below alpha0*, so the fraction must lie in [0, 1).
    """
    if not 0 <= alpha0_fraction < 1:
        raise ValueError("alpha0_fraction must lie in [0, 1)")
    bs = bound_constants(sys)
    bs.nu = float(nu)
    bs.b1 = solve_b1(sys.H, bs.M1)
    bs.alpha1 = alpha1(sys.W, bs.M1, sys.H, bs.b1)
    bs.alpha2 = alpha2(nu, sys, bs)
    bs.alpha0_star = alpha0_star(sys, bs.notes)
    bs.alpha0 = alpha0_fraction * bs.alpha0_star
    bs.r_hat = r_hat(bs, sys.H)
    bs.r_star = r_star(bs, sys.H)
    return bs
