"""Closed-loop sampled-data simulation, metrics, and the case-study presets."""

from __future__ import annotations

import dataclasses
import io
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import filters
from .cbf import QuadraticCbf, TransformedCbf, inscribed_polygon, make_rotation_2d
from .dynamics import LtiSystem, step_rk4
from .filters import Constant, Penalty, QpInfeasibleError, Standard, Zero
from .lie import lie_derivatives

log = logging.getLogger(__name__)

MASS = 0.033
GRAVITY = 9.81


class SimulationError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(f"step {step}: {msg}")
        self.step = step


class DivergedError(SimulationError):
    pass


class FilterInfeasibleError(SimulationError):
    pass


@dataclass
class Scenario:
    """One closed-loop experiment.

    ``strategy=None`` runs the proposed policy unfiltered. ``on_infeasible``
    is ``"halt"`` (raise) or ``"backup"`` (apply ``backup``, which defaults
    to the penalty strategy's pi_safe or to zero input).
    """

    system: object
    safe_set: object
    pi: Callable
    x0: np.ndarray
    dt: float
    horizon: float
    strategy: Standard | Penalty | None = None
    on_infeasible: str = "halt"
    backup: Callable | None = None
    chatter_threshold: float = 0.05
    eps: float = 1e-8
    name: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.dt = float(self.dt)
        self.horizon = float(self.horizon)
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.horizon >= self.dt:
            raise ValueError(f"horizon ({self.horizon}) must be at least dt ({self.dt})")
        if self.on_infeasible not in ("halt", "backup"):
            raise ValueError("on_infeasible must be 'halt' or 'backup'")
        if min(m.value(self.x0) for m in self.safe_set.members) < 0:
            warnings.warn(f"x0 = {self.x0.tolist()} lies outside the safe set", stacklevel=2)

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.horizon / self.dt + 1e-9))

    def backup_policy(self) -> Callable:
        if self.backup is not None:
            return self.backup
        if isinstance(self.strategy, Penalty):
            return self.strategy.pi_safe
        return Zero(self.system.m)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    u_proposed: np.ndarray
    h: np.ndarray
    lg_norm: np.ndarray
    active: np.ndarray
    fallback: np.ndarray
    infeasible: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    @property
    def h_min(self) -> np.ndarray:
        return self.h.min(axis=1)

    def header(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"u_proposed{i + 1}" for i in range(m)] + ["h_min", "lg_norm", "active", "fallback"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        h_min = self.h_min
        for k in range(len(self)):
            vals = [self.t[k], *self.x[k], *self.u[k], *self.u_proposed[k], h_min[k], self.lg_norm[k]]
            buf.write(",".join(f"{v:.9g}" for v in vals))
            buf.write(f",{int(self.active[k])},{int(self.fallback[k])}\n")
        return buf.getvalue()


def read_csv(text: str) -> dict[str, np.ndarray]:
    """Parse a trajectory CSV back into columns keyed by header name."""
    lines = text.strip("\n").split("\n")
    cols = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(cols))
    return {c: data[:, i] for i, c in enumerate(cols)}


@dataclass
class Metrics:
    min_h: float
    violated: bool
    input_min: float
    input_max: float
    total_variation: float
    chatter_count: int
    steps_near_singular: int
    active_steps: int
    fallback_steps: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def chatter_count(u, threshold: float) -> int:
    """Sign changes between consecutive input increments larger than ``threshold``."""
    d = np.diff(np.asarray(u, dtype=float))
    s = np.sign(d[np.abs(d) > threshold])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def compute_metrics(traj: Trajectory, chatter_threshold: float = 0.05, eps: float = 1e-8) -> Metrics:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    min_h = float(traj.h.min())
    return Metrics(
        min_h=min_h,
        violated=bool(min_h < 0),
        input_min=float(traj.u.min()),
        input_max=float(traj.u.max()),
        total_variation=float(np.abs(np.diff(traj.u, axis=0)).sum()),
        chatter_count=sum(chatter_count(traj.u[:, j], chatter_threshold) for j in range(traj.u.shape[1])),
        steps_near_singular=int(np.count_nonzero(traj.lg_norm <= eps)),
        active_steps=int(traj.active.sum()),
        fallback_steps=int(traj.fallback.sum()),
    )


def run(scn: Scenario) -> tuple[Trajectory, Metrics]:
    sys = scn.system
    members = scn.safe_set.members
    N = scn.n_steps
    n, m, q = scn.x0.size, sys.m, len(members)
    lti = isinstance(sys, LtiSystem)
    if lti:
        Ad, Bd = sys.discretize(scn.dt)

    xs = np.empty((N + 1, n))
    us = np.empty((N + 1, m))
    ups = np.empty((N + 1, m))
    hs = np.empty((N + 1, q))
    lgn = np.empty(N + 1)
    act = np.zeros(N + 1, dtype=bool)
    fb = np.zeros(N + 1, dtype=bool)
    inf = np.zeros(N + 1, dtype=bool)
    backup = scn.backup_policy()

    x = scn.x0.copy()
    for k in range(N + 1):
        if not np.all(np.isfinite(x)):
            raise DivergedError("state became non-finite", k)
        u_prop = np.atleast_1d(scn.pi(x))
        if scn.strategy is None:
            u = u_prop
            lgn[k] = min(lie_derivatives(sys, mem, x).lg_norm for mem in members)
        else:
            try:
                dec = filters.apply(sys, scn.strategy, scn.pi, x)
            except QpInfeasibleError as exc:
                if scn.on_infeasible == "halt":
                    raise FilterInfeasibleError(str(exc), k) from exc
                log.warning("step %d: filter infeasible, applying backup", k)
                u = np.atleast_1d(backup(x))
                inf[k] = fb[k] = True
                lgn[k] = min(lie_derivatives(sys, mem, x).lg_norm for mem in members)
            else:
                u = dec.u_out
                act[k] = dec.active
                fb[k] = dec.fallback_engaged
                lgn[k] = dec.lg_norm
        xs[k] = x
        us[k] = u
        ups[k] = u_prop
        for i, mem in enumerate(members):
            hs[k, i] = mem.value(x)
        if k < N:
            x = Ad @ x + Bd @ u if lti else step_rk4(sys, x, u, scn.dt)

    traj = Trajectory(np.arange(N + 1) * scn.dt, xs, us, ups, hs, lgn, act, fb, inf)
    return traj, compute_metrics(traj, scn.chatter_threshold, scn.eps)


def dt_sweep(scn: Scenario, dts: Sequence[float]) -> list[Metrics]:
    if len(dts) == 0:
        raise ValueError("need at least one sampling time")
    return [run(dataclasses.replace(scn, dt=float(dt)))[1] for dt in dts]


# Case-study parameters

def identified_lti() -> LtiSystem:
    """Two-state model identified from quadrotor flight data."""
    return LtiSystem([[0.0, 1.0], [-0.09, 0.10]], [[0.0], [18.09]])


def quadrotor_z() -> LtiSystem:
    """Vertical quadrotor axis, state (z, z'), input delta thrust from hover."""
    return LtiSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [30.30]])


def ellipse(center) -> QuadraticCbf:
    return QuadraticCbf(1.0, center, np.diag([1.31, 4.00]))


SIM_CENTER = (0.0, 0.0)
REAL_CENTER = (1.125, 0.0)
ROTATION = np.pi / 6

# Vertex phases keep every polygon edge non-vertical, so no half-space normal is orthogonal to B.
SIM_POLYGON = dict(k=7, phase=np.pi / 14, scale=0.97)
REAL_POLYGON = dict(k=5, phase=np.pi / 10, scale=0.97)

PRESETS = (
    "sim-uncertified", "sim-standard", "sim-penalty", "sim-transformed", "sim-affine",
    "real-standard", "real-penalty", "real-transformed", "real-affine",
)


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    family, variant = name.split("-", 1)
    if family == "sim":
        system = identified_lti()
        base = ellipse(SIM_CENTER)
        kw = dict(pi=Constant([-0.1]), x0=[0.5, -0.1], dt=0.001, horizon=15.0, chatter_threshold=0.05)
        r = 1.0
        poly = SIM_POLYGON
    else:
        system = quadrotor_z()
        base = ellipse(REAL_CENTER)
        mg = MASS * GRAVITY
        kw = dict(pi=Constant([-0.05 * mg]), x0=[1.25, 0.0], dt=0.167, horizon=30.0,
                  chatter_threshold=0.005 * mg)
        r = 75.0
        poly = REAL_POLYGON

    if variant == "transformed":
        R = make_rotation_2d(ROTATION)
        # rotate about the ellipse centre: h(R(x - delta)) with delta = (I - R^T) c
        safe = TransformedCbf(base, R, (np.eye(2) - R.T) @ base.c)
    elif variant == "affine":
        safe = inscribed_polygon(base, **poly)
    else:
        safe = base

    strategy = None
    if variant in ("standard", "transformed", "affine"):
        strategy = Standard(safe)
    elif variant == "penalty":
        strategy = Penalty(safe, r=r, eps=1e-8, pi_safe=Zero(1))
    return Scenario(system, safe, strategy=strategy, name=name, **kw)
