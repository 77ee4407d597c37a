"""Lie derivatives, relative-degree diagnostics and HOCBF constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cbf import AffineCbf, Identity, QuadraticCbf
from .dynamics import AdmissibleBox, LtiSystem

DEFAULT_EPS = 1e-8
DEFAULT_GRID = 201


class UndeterminedRelativeDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class LieData:
    lf_h: float
    lg_h: np.ndarray
    lg_norm: float

    def hdot(self, u) -> float:
        return self.lf_h + float(self.lg_h @ np.atleast_1d(u))


def lie_derivatives(sys, cbf, x) -> LieData:
    """L_f h = grad h . f(x) and L_g h = grad h . g(x)."""
    x = np.asarray(x, dtype=float)
    dh = cbf.grad(x)
    lf = float(dh @ sys.f(x))
    lg = dh @ sys.g(x)
    return LieData(lf, lg, float(np.linalg.norm(lg)))


def quadratic_lti_lie(sys: LtiSystem, cbf: QuadraticCbf, x) -> LieData:
    """Closed form for an ellipsoidal barrier on an LTI system.

    L_g h = -2 (x - c)^T P B and L_f h = -2 (x - c)^T P A x.
    """
    x = np.asarray(x, dtype=float)
    d = x - cbf.c
    row = -2.0 * (d @ cbf.P)
    lg = row @ sys.B
    return LieData(float(row @ (sys.A @ x)), lg, float(np.linalg.norm(lg)))


@dataclass
class RelativeDegreeReport:
    s: int | None
    eps: float
    singular_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    n_checked: int = 0

    @property
    def determined(self) -> bool:
        return self.s is not None

    def to_dict(self) -> dict:
        return {
            "relative_degree": self.s if self.s is not None else "undetermined",
            "eps": self.eps,
            "n_checked": self.n_checked,
            "n_singular": int(len(self.singular_points)),
            "singular_points": np.asarray(self.singular_points).tolist(),
        }


def markov_coefficients(sys: LtiSystem, p) -> list[np.ndarray]:
    """Rows p^T A^{i-1} B for i = 1..n."""
    p = np.asarray(p, dtype=float)
    out = []
    row = p
    for _ in range(sys.n):
        out.append(row @ sys.B)
        row = row @ sys.A
    return out


def global_relative_degree_affine_lti(sys: LtiSystem, cbf: AffineCbf, tol: float = DEFAULT_EPS) -> RelativeDegreeReport:
    if not tol > 0:
        raise ValueError("tol must be positive")
    for i, coeff in enumerate(markov_coefficients(sys, cbf.p), start=1):
        if np.linalg.norm(coeff) > tol:
            return RelativeDegreeReport(i, tol)
    return RelativeDegreeReport(None, tol)


def singular_set_scan(sys, cbf, box: AdmissibleBox, grid_per_dim: int = DEFAULT_GRID, eps: float = DEFAULT_EPS) -> RelativeDegreeReport:
    """Grid points where ||L_g h(x)|| <= eps, i.e. where the first-order filter goes blind."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = box.grid(grid_per_dim)
    hits = [x for x in pts if lie_derivatives(sys, cbf, x).lg_norm <= eps]
    s = None
    if isinstance(cbf, AffineCbf) and isinstance(sys, LtiSystem):
        s = global_relative_degree_affine_lti(sys, cbf, eps).s
    elif not hits:
        s = 1
    return RelativeDegreeReport(s, eps, np.array(hits).reshape(-1, box.n), len(pts))


def condition_feasibility(sys, cbf, box: AdmissibleBox, grid_per_dim: int = DEFAULT_GRID,
                          gamma=None, u_lower=None, u_upper=None) -> dict:
    """Sample the barrier condition max_u hdot(x, u) >= -gamma(h(x)) over grid points in the set.

    Without input bounds the condition fails only where L_g h = 0 and the
    drift alone points out too fast. With a probe box the maximum is
    attained at a box vertex in each input coordinate.
    """
    gamma = gamma or Identity()
    pts = box.grid(grid_per_dim)
    n_in = 0
    n_ok = 0
    bad = []
    for x in pts:
        members = cbf.members
        vals = [mem.value(x) for mem in members]
        if min(vals) < 0:
            continue
        n_in += 1
        ok = True
        for mem, h in zip(members, vals):
            lie = lie_derivatives(sys, mem, x)
            if u_lower is None or u_upper is None:
                best = np.inf if lie.lg_norm > 0 else lie.lf_h
            else:
                u = np.where(lie.lg_h >= 0, u_upper, u_lower)
                best = lie.hdot(u)
            if best < -gamma(h):
                ok = False
                break
        if ok:
            n_ok += 1
        else:
            bad.append(x)
    return {
        "n_in_set": n_in,
        "n_feasible": n_ok,
        "fraction_feasible": (n_ok / n_in) if n_in else None,
        "infeasible_points": np.array(bad).reshape(-1, box.n).tolist(),
    }


@dataclass(frozen=True)
class HocbfChain:
    """h_0 = h, h_i = d/dt h_{i-1} + k_i h_{i-1}, for an affine barrier on an LTI system.

    Each h_i stays affine: h_i(x) = q_i^T x + d_i with
    q_i = A^T q_{i-1} + k_i q_{i-1} and d_i = k_i d_{i-1}.
    """

    system: LtiSystem
    cbf: AffineCbf
    gains: tuple
    s: int

    def __post_init__(self):
        if not isinstance(self.cbf, AffineCbf):
            raise TypeError("HOCBF chains are supported for affine barriers only")
        if self.s < 1:
            raise ValueError("relative degree must be at least 1")
        gains = tuple(float(k) for k in self.gains)
        if len(gains) != self.s:
            raise ValueError(f"need {self.s} gains, got {len(gains)}")
        if any(not k > 0 for k in gains):
            raise ValueError("HOCBF gains must be positive")
        object.__setattr__(self, "gains", gains)

    @classmethod
    def build(cls, system: LtiSystem, cbf: AffineCbf, gains: Sequence[float], tol: float = DEFAULT_EPS) -> "HocbfChain":
        """Chain with depth set by the global relative degree; extra gains are ignored."""
        rep = global_relative_degree_affine_lti(system, cbf, tol)
        if not rep.determined:
            raise UndeterminedRelativeDegreeError("p is orthogonal to B, AB, ..., A^{n-1}B")
        if len(gains) < rep.s:
            raise ValueError(f"relative degree {rep.s} needs {rep.s} gains, got {len(gains)}")
        return cls(system, cbf, tuple(gains[: rep.s]), rep.s)

    def levels(self) -> list[tuple[np.ndarray, float]]:
        """(q_i, d_i) for i = 0..s-1."""
        q, d = np.array(self.cbf.p), self.cbf.b
        out = [(q, d)]
        for k in self.gains[:-1]:
            q = self.system.A.T @ q + k * q
            d = k * d
            out.append((q, d))
        return out


def hocbf_constraint(chain: HocbfChain, x) -> tuple[np.ndarray, float]:
    """Coefficients of coeff_u . u >= lower_bound for the top of the chain."""
    x = np.asarray(x, dtype=float)
    q, d = chain.levels()[-1]
    h_top = float(q @ x + d)
    coeff = q @ chain.system.B
    lower = -float(q @ (chain.system.A @ x)) - chain.gains[-1] * h_top
    return coeff, lower
