"""Candidate barrier functions, class-K_e maps, and safe-set modifications.

Every barrier exposes ``value(x)``, ``grad(x)`` and ``members``. ``members``
is the list of smooth functions the filter turns into separate constraints:
a single barrier lists itself, a polytope lists its half-spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dynamics import AdmissibleBox


class UnsupportedDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    """gamma(h) = h."""

    def __call__(self, h: float) -> float:
        return h


@dataclass(frozen=True)
class LinearGain:
    """gamma(h) = k h with k > 0."""

    k: float

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise ValueError(f"class-K_e gain must be positive, got {self.k}")

    def __call__(self, h: float) -> float:
        return self.k * h


ClassKappaE = Union[Identity, LinearGain]


def _vec(v) -> np.ndarray:
    out = np.array(v, dtype=float).ravel()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class QuadraticCbf:
    """h(x) = beta - (x - c)^T P (x - c), an ellipsoid for P > 0."""

    beta: float
    c: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        c = _vec(self.c)
        P = np.array(self.P, dtype=float)
        if P.shape != (c.size, c.size):
            raise ValueError(f"P has shape {P.shape}, expected {(c.size, c.size)}")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12):
            raise ValueError("P must be symmetric")
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise ValueError("P must be positive definite") from None
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        P.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def members(self) -> list:
        return [self]

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.c
        return float(self.beta - d @ self.P @ d)

    def grad(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.c
        return -2.0 * (self.P @ d)

    def boundary_points(self, k: int, phase: float = 0.0) -> np.ndarray:
        """k points on h = 0 at evenly spaced angles of the unit-circle preimage."""
        # (x - c) = sqrt(beta) L^{-T} z with P = L L^T maps |z| = 1 onto h = 0
        L = np.linalg.cholesky(self.P)
        ang = phase + 2.0 * np.pi * np.arange(k) / k
        Z = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return self.c + np.sqrt(self.beta) * np.linalg.solve(L.T, Z.T).T


@dataclass(frozen=True, eq=False)
class AffineCbf:
    """h(x) = p^T x + b."""

    p: np.ndarray
    b: float

    def __post_init__(self):
        p = _vec(self.p)
        if not np.any(p != 0):
            raise ValueError("affine barrier needs a nonzero normal p")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "b", float(self.b))

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def members(self) -> list:
        return [self]

    def value(self, x) -> float:
        return float(self.p @ np.asarray(x, dtype=float) + self.b)

    def grad(self, x) -> np.ndarray:
        return np.array(self.p)


@dataclass(frozen=True, eq=False)
class TransformedCbf:
    """h~(x) = inner(R (x - delta)) for a rotation R and offset delta."""

    inner: object
    R: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        delta = _vec(self.delta)
        n = delta.size
        if R.shape != (n, n):
            raise ValueError(f"R has shape {R.shape}, expected {(n, n)}")
        if not np.allclose(R @ R.T, np.eye(n), rtol=0, atol=1e-10):
            raise ValueError("R must be orthogonal (R R^T = I)")
        if abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("R must have determinant 1")
        R.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.delta.size

    @property
    def members(self) -> list:
        return [self]

    def value(self, x) -> float:
        return self.inner.value(self.R @ (np.asarray(x, dtype=float) - self.delta))

    def grad(self, x) -> np.ndarray:
        z = self.R @ (np.asarray(x, dtype=float) - self.delta)
        return self.R.T @ self.inner.grad(z)


@dataclass(frozen=True, eq=False)
class CbfSet:
    """Intersection of half-spaces {x : h_i(x) >= 0 for all i}.

    ``value`` and ``grad`` use the pointwise minimum (lowest index on ties)
    and are diagnostics only; filters constrain each member separately.
    """

    members: list = field(default_factory=list)

    def __post_init__(self):
        members = list(self.members)
        if not members:
            raise ValueError("polytope needs at least one member")
        for mem in members:
            if not isinstance(mem, AffineCbf):
                raise TypeError("polytope members must be AffineCbf")
        object.__setattr__(self, "members", members)

    @property
    def n(self) -> int:
        return self.members[0].n

    @property
    def normals(self) -> np.ndarray:
        return np.stack([mem.p for mem in self.members])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([mem.b for mem in self.members])

    def member_values(self, x) -> np.ndarray:
        return np.array([mem.value(x) for mem in self.members])

    def value(self, x) -> float:
        return float(np.min(self.member_values(x)))

    def grad(self, x) -> np.ndarray:
        i = int(np.argmin(self.member_values(x)))
        return np.array(self.members[i].p)

    def contains(self, x) -> bool:
        return all(mem.value(x) >= 0 for mem in self.members)


Cbf = Union[QuadraticCbf, AffineCbf, TransformedCbf, CbfSet]


def make_rotation_2d(theta: float, n: int = 2) -> np.ndarray:
    if n != 2:
        raise UnsupportedDimensionError(f"rotations are only built for n = 2, got n = {n}")
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated(inner, theta: float, delta=None) -> TransformedCbf:
    """Convenience wrapper: inner evaluated at R(theta) (x - delta)."""
    delta = np.zeros(inner.n) if delta is None else delta
    return TransformedCbf(inner, make_rotation_2d(theta, inner.n), delta)


def inscribed_polygon(ellipse: QuadraticCbf, k: int, phase: float = 0.0, scale: float = 1.0) -> CbfSet:
    """Polygon with vertices on a scaled copy of the ellipse boundary.

    The vertices sit on ``c + scale * (v - c)`` for boundary points v, so for
    scale <= 1 the polygon lies inside the ellipse. Normals are unit length
    and point inward.
    """
    if ellipse.n != 2:
        raise UnsupportedDimensionError("inscribed polygons are built for n = 2 only")
    if k < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    V = ellipse.c + scale * (ellipse.boundary_points(k, phase) - ellipse.c)
    members = []
    for i in range(k):
        v0, v1 = V[i], V[(i + 1) % k]
        e = v1 - v0
        nrm = np.array([-e[1], e[0]])
        nrm /= np.linalg.norm(nrm)
        if nrm @ (ellipse.c - v0) < 0:
            nrm = -nrm
        members.append(AffineCbf(nrm, -float(nrm @ v0)))
    return CbfSet(members)


@dataclass
class InnerCheckReport:
    """Grid points inside the polytope but outside the outer set."""

    n_checked: int
    n_inside: int
    violations: np.ndarray

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def to_dict(self) -> dict:
        return {
            "n_checked": self.n_checked,
            "n_inside_polytope": self.n_inside,
            "n_violations": int(len(self.violations)),
            "violations": self.violations.tolist(),
        }


def polytope_inner_check(poly: CbfSet, outer, box: AdmissibleBox, grid_per_dim: int) -> InnerCheckReport:
    pts = box.grid(grid_per_dim)
    inside = np.all(pts @ poly.normals.T + poly.offsets >= 0, axis=1)
    bad = [x for x in pts[inside] if outer.value(x) < 0]
    viol = np.array(bad).reshape(-1, box.n)
    return InnerCheckReport(len(pts), int(inside.sum()), viol)
