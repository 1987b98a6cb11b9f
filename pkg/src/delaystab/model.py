"""System description and the a-priori bound constants.

A system is

    x'(t) = sum_{j=0}^{m} A_j x(t - j h) + int_{-H}^{0} G(theta) x(t + theta) dtheta,

with H = m h and G constant on each segment [-(j+1) h, -j h).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np


class SystemValidationError(ValueError):
    """Raised when a raw system description violates one or more invariants.

    ``errors`` lists every violation, not just the first one found.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid system: " + "; ".join(self.errors))


@dataclass(frozen=True, eq=False)
class DelaySystem:
    A: tuple  # m + 1 arrays, A[j] multiplies x(t - j h)
    G: tuple  # m arrays, G[j] is the kernel on [-(j+1) h, -j h)
    h: float
    W: np.ndarray
    eta: float = 2.0

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return len(self.G)

    @property
    def H(self) -> float:
        return self.m * self.h

    def scaled(self, c: float) -> "DelaySystem":
        """Same system with every A_j and G_j multiplied by ``c``."""
        return replace(self, A=tuple(c * a for a in self.A), G=tuple(c * g for g in self.G))

    def with_W(self, W) -> "DelaySystem":
        return replace(self, W=np.array(W, dtype=float))


def _as_matrix(x, name, errors):
    try:
        arr = np.array(x, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{name} is not a numeric matrix")
        return None
    if arr.size == 1 and arr.ndim < 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        errors.append(f"{name} must be square, got shape {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"{name} has non-finite entries")
        return None
    return arr


def validate_system(raw: Mapping[str, Any] | DelaySystem) -> DelaySystem:
    """Build a :class:`DelaySystem` from a mapping, checking every invariant.

    Required keys are ``A`` (m + 1 matrices), ``G`` (m matrices) and ``h``.
    ``W`` defaults to the identity and ``eta`` to 2. Scalars are accepted
    for 1x1 systems.
    """
    if isinstance(raw, DelaySystem):
        raw = {"A": raw.A, "G": raw.G, "h": raw.h, "W": raw.W, "eta": raw.eta}
    errors: list[str] = []

    A_raw = raw.get("A")
    G_raw = raw.get("G")
    if A_raw is None or len(A_raw) < 2:
        errors.append("A must list at least two matrices (A_0 and A_1)")
        A_raw = A_raw or []
    if G_raw is None or len(G_raw) < 1:
        errors.append("G must list at least one kernel segment")
        G_raw = G_raw or []
    A = [_as_matrix(a, f"A[{j}]", errors) for j, a in enumerate(A_raw)]
    G = [_as_matrix(g, f"G[{j}]", errors) for j, g in enumerate(G_raw)]

    shapes = {a.shape for a in A + G if a is not None}
    n = None
    if len(shapes) > 1:
        errors.append(f"dimension mismatch among A/G matrices: {sorted(shapes)}")
    elif shapes:
        n = shapes.pop()[0]

    if A_raw and G_raw and len(A_raw) != len(G_raw) + 1:
        errors.append(
            f"need len(A) == len(G) + 1 (pointwise delays 0..m, kernel segments 0..m-1); "
            f"got {len(A_raw)} and {len(G_raw)}"
        )

    h = raw.get("h")
    try:
        h = float(h)
        if not math.isfinite(h) or h <= 0:
            errors.append("h must be positive")
    except (TypeError, ValueError):
        errors.append("h must be a positive number")

    W_raw = raw.get("W")
    if W_raw is None and n is not None:
        W_raw = np.eye(n)
    W = _as_matrix(W_raw, "W", errors) if W_raw is not None else None
    if W is not None:
        if n is not None and W.shape[0] != n:
            errors.append(f"dimension mismatch: W is {W.shape}, system is {n}x{n}")
        elif not np.array_equal(W, W.T):
            errors.append("W not symmetric")
        else:
            try:
                np.linalg.cholesky(W)
            except np.linalg.LinAlgError:
                errors.append("W not positive definite")

    eta = raw.get("eta", 2.0)
    try:
        eta = float(eta)
        if not eta > 1:
            errors.append("eta must be > 1")
    except (TypeError, ValueError):
        errors.append("eta must be a number > 1")

    if errors:
        raise SystemValidationError(errors)
    return DelaySystem(A=tuple(A), G=tuple(G), h=h, W=W, eta=eta)


@dataclass
class BoundSet:
    """Derived constants of a system. Filled progressively by the pipeline."""

    M: float
    b: float
    M1: float
    M2: float
    L: float
    nu: float | None = None
    b1: float | None = None
    alpha0_star: float | None = None
    alpha0: float | None = None
    alpha1: float | None = None
    alpha2: float | None = None
    r_hat: int | None = None
    r_star: int | None = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        keys = ["M", "b", "M1", "M2", "L", "nu", "b1", "alpha0_star", "alpha0",
                "alpha1", "alpha2", "r_hat", "r_star"]
        out = {}
        for k in keys:
            v = getattr(self, k)
            if isinstance(v, (float, np.floating)):
                v = float(v) if math.isfinite(v) else None
            out[k] = v
        return out


def spectral_norm(X) -> float:
    return float(np.linalg.norm(X, 2))


def bound_constants(sys: DelaySystem) -> BoundSet:
    """M, b, M1, M2 and L from the growth bound ||K(t)|| <= exp(M1 t)."""
    H, h = sys.H, sys.h
    normsA = [spectral_norm(a) for a in sys.A]
    M = float(sum(normsA))
    b = float(max(spectral_norm(g) for g in sys.G))
    M1 = M + b * H
    if M1 > 0:
        kernel_part = (b / M1) * (-math.expm1(-M1 * H))
    else:
        kernel_part = b * H
    M2 = sum(nA * math.exp(-M1 * j * h) for j, nA in enumerate(normsA)) + kernel_part
    L = M2 * math.exp(M1 * H) if M1 * H < 709.0 else math.inf
    return BoundSet(M=M, b=b, M1=M1, M2=M2, L=L)


def approximation_error(r: int, bounds: BoundSet, H: float) -> float:
    """Sup-norm distance achievable by an r-point fundamental-matrix combination."""
    if r < 2:
        raise ValueError(f"r must be >= 2, got {r}")
    L, M1 = bounds.L, bounds.M1
    if L + M1 == 0:
        return 0.0
    # log form keeps huge L*H finite-or-inf instead of raising
    log_e = math.log(H * (L + M1)) + L * H - math.log(r - 1 + L * H)
    return math.exp(log_e) if log_e < 709.0 else math.inf
