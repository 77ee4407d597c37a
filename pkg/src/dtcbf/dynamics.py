"""Control-affine dynamics and one-interval propagation under a held input."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class InvalidSystemError(ValueError):
    """Raised for malformed or non-finite system matrices."""


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise InvalidSystemError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidSystemError(f"{name} has non-finite entries")
    return M


def matrix_exp(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor core.

    The argument is scaled by 2**-s so its 1-norm is at most 1/2, where an
    18-term series is accurate to well below double precision, and the
    result is squared s times.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix_exp needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exp needs finite entries")
    n = M.shape[0]
    norm = np.linalg.norm(M, 1)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    X = M / (2.0**s)
    term = np.eye(n)
    out = np.eye(n)
    for k in range(1, 19):
        term = term @ X / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """x' = A x + B u."""

    A: np.ndarray
    B: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise InvalidSystemError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise InvalidSystemError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def f(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.B

    def discretize(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Cached zero-order-hold pair (Ad, Bd) for this sampling time."""
        key = float(dt)
        hit = self._cache.get(key)
        if hit is None:
            hit = lti_discretize(self, key)
            self._cache[key] = hit
        return hit


@dataclass(frozen=True)
class ControlAffineSystem:
    """x' = f(x) + g(x) u with user-supplied evaluators."""

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_lti(cls, sys: LtiSystem) -> "ControlAffineSystem":
        A, B = sys.A, sys.B
        return cls(sys.n, sys.m, lambda x: A @ x, lambda x: B)


@dataclass(frozen=True)
class AdmissibleBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have equal length")
        if not np.all(lo < hi):
            raise ValueError("box needs lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    def grid(self, per_dim: int) -> np.ndarray:
        """All grid points, shape (per_dim**n, n), first coordinate varying slowest."""
        if per_dim < 2:
            raise ValueError("grid needs at least 2 points per dimension")
        axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def lti_discretize(sys: LtiSystem, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH discretization via the exponential of [[A, B], [0, 0]] * dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = sys.n, sys.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = sys.A
    M[:n, n:] = sys.B
    E = matrix_exp(M * dt)
    Ad = E[:n, :n].copy()
    Bd = E[:n, n:].copy()
    Ad.flags.writeable = False
    Bd.flags.writeable = False
    return Ad, Bd


def step_exact(sys: LtiSystem, x, u, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    Ad, Bd = sys.discretize(dt)
    return Ad @ np.asarray(x, dtype=float) + Bd @ np.atleast_1d(np.asarray(u, dtype=float))


def step_rk4(sys, x, u, dt: float) -> np.ndarray:
    """Classical RK4 over one interval with u held constant."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))

    def rhs(z):
        return sys.f(z) + sys.g(z) @ u

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
