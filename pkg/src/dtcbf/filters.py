"""Per-step safety filters: the standard CBF-QP and the penalty-augmented variant."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cbf import AffineCbf, Identity
from .dynamics import LtiSystem
from .lie import HocbfChain, LieData, hocbf_constraint, lie_derivatives


class QpInfeasibleError(RuntimeError):
    """The constraint set {u : a_i . u >= b_i} is empty.

    ``indices`` names the constraints that certify emptiness (a single
    zero-row constraint, or the pair of conflicting bounds for m = 1) and
    ``violation`` is the amount by which they cannot be met.
    """

    def __init__(self, msg: str, indices: tuple = (), violation: float = float("nan")):
        super().__init__(msg)
        self.indices = tuple(indices)
        self.violation = violation


@dataclass
class QpInstance:
    """argmin 1/2 ||u - u_ref||^2 s.t. a_i . u >= b_i and optional lower <= u <= upper."""

    u_ref: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        m = self.u_ref.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, m)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.size:
            raise ValueError("constraint rows and bounds differ in count")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("constraint coefficients must be finite")

    @classmethod
    def single(cls, u_ref, a, b) -> "QpInstance":
        return cls(u_ref, np.atleast_2d(a), [b])

    def all_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows and bounds with box bounds appended as +-e_j rows."""
        m = self.u_ref.size
        rows, rhs = [self.A], [self.b]
        if self.lower is not None:
            rows.append(np.eye(m))
            rhs.append(np.broadcast_to(np.asarray(self.lower, dtype=float), (m,)))
        if self.upper is not None:
            rows.append(-np.eye(m))
            rhs.append(-np.broadcast_to(np.asarray(self.upper, dtype=float), (m,)))
        return np.vstack(rows), np.concatenate(rhs)


def _solve_interval(u_ref: float, A: np.ndarray, b: np.ndarray) -> float:
    lo, hi = -np.inf, np.inf
    i_lo = i_hi = -1
    for i, (a, bi) in enumerate(zip(A[:, 0], b)):
        if a > 0:
            t = bi / a
            if t > lo:
                lo, i_lo = t, i
        elif a < 0:
            t = bi / a
            if t < hi:
                hi, i_hi = t, i
        elif bi > 0:
            raise QpInfeasibleError(f"constraint {i} reads 0 >= {bi:g}", (i,), bi)
    if lo > hi:
        raise QpInfeasibleError(
            f"constraints {i_lo} and {i_hi} require u >= {lo:g} and u <= {hi:g}",
            (i_lo, i_hi), lo - hi)
    if u_ref < lo:
        return lo
    if u_ref > hi:
        return hi
    return u_ref


def _solve_dual_active_set(u_ref: np.ndarray, A: np.ndarray, b: np.ndarray,
                           tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Goldfarb-Idnani dual active set method specialised to an identity Hessian.

    Starts at the unconstrained minimiser and adds the most violated
    constraint (lowest index on ties) until all hold.
    """
    u = u_ref.copy()
    active: list[int] = []
    lam = np.zeros(0)
    scale = 1.0 + np.abs(b)
    for _ in range(max_iter):
        slack = A @ u - b
        slack[active] = 0.0
        p = int(np.argmin(slack / scale))
        if slack[p] >= -tol * scale[p]:
            return u
        lam_p = 0.0
        while True:
            N = A[active]
            a_p = A[p]
            if active:
                r = np.linalg.solve(N @ N.T, N @ a_p)
                z = a_p - N.T @ r
            else:
                r = np.zeros(0)
                z = a_p
            pos = r > tol
            t1, j_block = np.inf, -1
            if np.any(pos):
                ratios = np.where(pos, lam / np.where(pos, r, 1.0), np.inf)
                j_block = int(np.argmin(ratios))
                t1 = ratios[j_block]
            zz = float(z @ z)
            if zz <= tol * max(1.0, float(a_p @ a_p)):
                if j_block < 0:
                    viol = float(b[p] - a_p @ u)
                    raise QpInfeasibleError(
                        f"constraint {p} cannot be met together with {active}",
                        (p, *active), viol)
                t = t1
            else:
                t2 = float(b[p] - a_p @ u) / zz
                t = min(t1, t2)
                u = u + t * z
            lam = lam - t * r
            lam_p += t
            if t == t1 and j_block >= 0:
                del active[j_block]
                lam = np.delete(lam, j_block)
                continue
            active.append(p)
            lam = np.append(lam, lam_p)
            break
    raise RuntimeError("active-set iteration limit reached")


def solve_qp(inst: QpInstance) -> np.ndarray:
    A, b = inst.all_constraints()
    if A.shape[0] == 0:
        return inst.u_ref.copy()
    if inst.u_ref.size == 1:
        return np.array([_solve_interval(float(inst.u_ref[0]), A, b)])
    if A.shape[0] == 1:
        a = A[0]
        aa = float(a @ a)
        gap = float(b[0] - a @ inst.u_ref)
        if aa == 0.0:
            if gap > 0:
                raise QpInfeasibleError(f"constraint 0 reads 0 >= {b[0]:g}", (0,), gap)
            return inst.u_ref.copy()
        return inst.u_ref + max(0.0, gap) / aa * a
    return _solve_dual_active_set(inst.u_ref, A, b)


def grid_oracle(inst: QpInstance, lo: float, hi: float, step: float,
                objective: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Brute-force scan of a scalar input over [lo, hi]; for cross-checking solve_qp."""
    if inst.u_ref.size != 1:
        raise ValueError("grid oracle handles a single input only")
    if not step > 0:
        raise ValueError("step must be positive")
    u = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    A, b = inst.all_constraints()
    ok = np.all(np.outer(u, A[:, 0]) >= b, axis=1) if A.size else np.ones(u.size, bool)
    if not ok.any():
        raise QpInfeasibleError("no feasible grid point")
    J = objective(u) if objective is not None else 0.5 * (u - inst.u_ref[0]) ** 2
    J = np.where(ok, J, np.inf)
    return float(u[int(np.argmin(J))])


@dataclass(frozen=True)
class Constant:
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))

    def __call__(self, x) -> np.ndarray:
        return self.value.copy()


def Zero(m: int = 1) -> Constant:
    return Constant(np.zeros(m))


@dataclass(frozen=True)
class Standard:
    """ḣ(x, u) >= -gamma(h(x)) per member, closest input to pi(x)."""

    safe_set: object
    gamma: object = field(default_factory=Identity)
    hocbf_gains: tuple | None = None


@dataclass(frozen=True)
class Penalty:
    """Standard constraint with the objective blended toward pi_safe as ||L_g h|| shrinks."""

    safe_set: object
    r: float = 1.0
    eps: float = 1e-8
    pi_safe: Callable = field(default_factory=Zero)
    gamma: object = field(default_factory=Identity)
    hocbf_gains: tuple | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"penalty weight r must be positive, got {self.r}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class FilterDecision:
    u_out: np.ndarray
    active: bool
    fallback_engaged: bool
    lie: list[LieData]
    objective_value: float

    @property
    def lg_norm(self) -> float:
        return min(l.lg_norm for l in self.lie)


def constraint_rows(sys, strategy, x) -> tuple[np.ndarray, np.ndarray, list[LieData]]:
    """One row a_i . u >= b_i per safe-set member, plus the Lie data behind it.

    With ``hocbf_gains`` set, affine members on an LTI system use the
    higher-order constraint and the reported L_g entry is L_g L_f^{s-1} h.
    """
    rows, rhs, lies = [], [], []
    for mem in strategy.safe_set.members:
        if strategy.hocbf_gains is not None and isinstance(mem, AffineCbf) and isinstance(sys, LtiSystem):
            chain = HocbfChain.build(sys, mem, strategy.hocbf_gains)
            a, lower = hocbf_constraint(chain, x)
            lie = LieData(float("nan"), a, float(np.linalg.norm(a)))
        else:
            lie = lie_derivatives(sys, mem, x)
            a, lower = lie.lg_h, -strategy.gamma(mem.value(x)) - lie.lf_h
        rows.append(np.atleast_1d(a))
        rhs.append(lower)
        lies.append(lie)
    return np.array(rows), np.array(rhs), lies


def _is_active(u: np.ndarray, u_ref: np.ndarray) -> bool:
    return not np.array_equal(u, u_ref)


def filter_standard(sys, strategy: Standard, pi, x) -> FilterDecision:
    x = np.asarray(x, dtype=float)
    u_ref = np.atleast_1d(pi(x))
    A, b, lies = constraint_rows(sys, strategy, x)
    u = solve_qp(QpInstance(u_ref, A, b))
    return FilterDecision(u, _is_active(u, u_ref), False, lies, 0.5 * float((u - u_ref) @ (u - u_ref)))


def penalty_target(u_pi, u_safe, w: float, r: float) -> np.ndarray:
    """Minimiser of 1/2|u - u_pi|^2 + r/(2 w^2) |u - u_safe|^2."""
    lam = r / (w * w)
    return (u_pi + lam * u_safe) / (1.0 + lam)


def filter_penalty(sys, strategy: Penalty, pi, x) -> FilterDecision:
    x = np.asarray(x, dtype=float)
    u_pi = np.atleast_1d(pi(x))
    u_safe = np.atleast_1d(strategy.pi_safe(x))
    A, b, lies = constraint_rows(sys, strategy, x)
    w = min(l.lg_norm for l in lies)
    if w <= strategy.eps:
        return FilterDecision(u_safe, False, True, lies, _penalty_objective(u_safe, u_pi, u_safe, w, strategy.r))
    u_ref = penalty_target(u_pi, u_safe, w, strategy.r)
    u = solve_qp(QpInstance(u_ref, A, b))
    return FilterDecision(u, _is_active(u, u_ref), False, lies, _penalty_objective(u, u_pi, u_safe, w, strategy.r))


def _penalty_objective(u, u_pi, u_safe, w, r) -> float:
    d1 = u - u_pi
    d2 = u - u_safe
    extra = 0.0 if w == 0 else r / (2.0 * w * w) * float(d2 @ d2)
    return 0.5 * float(d1 @ d1) + extra


def apply(sys, strategy, pi, x) -> FilterDecision:
    if isinstance(strategy, Penalty):
        return filter_penalty(sys, strategy, pi, x)
    if isinstance(strategy, Standard):
        return filter_standard(sys, strategy, pi, x)
    raise TypeError(f"unknown filter strategy {type(strategy).__name__}")
