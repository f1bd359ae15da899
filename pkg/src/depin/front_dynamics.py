"""Graph-front evolution under curvature, applied force and dry friction.

The front is a height function ``u(x, t)`` on a periodic grid.  Each node
solves the scalar inclusion

    eps * v + (tau + phi(x, u)) * dR(v)  ∋  kappa + F,        R(v) = |v|

for its normal velocity ``v`` in closed form (soft thresholding) and moves
vertically by ``dt * v * sqrt(1 + u_x^2)``.  Nodes whose driving force does
not exceed the local friction stick exactly, so a pinned front has ``v == 0``
identically whenever ``tau > 0``.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, TextIO

import numpy as np

from . import kernels
from .obstacle_field import ObstacleField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KineticRelation:
    """Stick-slip kinetics ``F(a) = epsilon * a + tau * dR(a)``."""

    epsilon: float = 1.0
    tau: float = 0.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau!r}")

    @property
    def sup_zero(self) -> float:
        """``sup F(0)``, the force the kinetics alone can hold."""
        return self.tau

    def sup_at(self, v: float) -> float:
        """``sup F(v)`` for ``v >= 0``."""
        return self.epsilon * v + self.tau


def prox_dry_friction(b, lam, epsilon: float = 1.0):
    """Solve ``epsilon * v + lam * dR(v) ∋ b`` for ``v``.

    The solution is the shrinkage ``sign(b) * max(|b| - lam, 0) / epsilon``;
    it vanishes exactly when ``|b| <= lam``.  A quotient that rounded up is
    moved one ulp towards zero, so ``|epsilon * v| <= |b|`` holds in floating
    point too.
    """
    b = np.asarray(b, dtype=float)
    ab = np.abs(b) - lam
    v = np.where(ab > 0.0, ab / epsilon, 0.0)
    v = np.where(v * epsilon > ab, np.nextafter(v, 0.0), v)
    v = np.where(b < 0.0, -v, v)
    return float(v) if v.ndim == 0 else v


@dataclass
class FrontState:
    heights: np.ndarray
    dx: float
    time: float = 0.0
    x_offset: float = 0.0

    def __post_init__(self) -> None:
        self.heights = np.ascontiguousarray(self.heights, dtype=float)
        if self.heights.ndim != 1 or self.heights.size < 8:
            raise ValueError("a front needs at least 8 nodes")
        if not self.dx > 0:
            raise ValueError(f"dx must be > 0, got {self.dx!r}")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("front heights must be finite")

    @classmethod
    def flat(cls, width: float, dx: float, height: float = 0.0) -> "FrontState":
        """Flat front on ``[0, width)``; ``dx`` is adjusted to divide the period."""
        n = max(8, int(round(width / dx)))
        return cls(np.full(n, float(height)), width / n)

    @property
    def n(self) -> int:
        return self.heights.size

    @property
    def width(self) -> float:
        return self.n * self.dx

    def node_x(self, period: Optional[float] = None) -> np.ndarray:
        """Node abscissae reduced into ``[0, period)``."""
        period = self.width if period is None else period
        off = math.fmod(self.x_offset, period)
        if off < 0:
            off += period
        x = np.mod(off + np.arange(self.n) * self.dx, period)
        x[x >= period] = 0.0
        return x

    def copy(self) -> "FrontState":
        return replace(self, heights=self.heights.copy())


@dataclass(frozen=True)
class SimConfig:
    """Numerical and stopping parameters of a run.

    ``tol_v`` is the velocity below which the front counts as at rest; with
    ``tol_v = 0`` only exact sticking (every ``v == 0``) pins a run.
    """

    dt: float
    t_max: float
    h_ballistic: float
    pinned_confirm_steps: int = 200
    tol_v: float = 0.0
    slope_max: float = 10.0
    chunk_steps: int = 500
    cfl_factor: float = 0.25

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if self.pinned_confirm_steps < 1:
            raise ValueError("pinned_confirm_steps must be >= 1")
        if not 0 < self.cfl_factor <= 0.25:
            raise ValueError("cfl_factor must lie in (0, 0.25]")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    def check_cfl(self, dx: float, epsilon: float) -> None:
        limit = self.cfl_factor * epsilon * dx * dx
        if self.dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates the explicit limit {limit} "
                             f"(cfl_factor={self.cfl_factor}, dx={dx}, epsilon={epsilon})")


def default_dx(rho: float, r0: float) -> float:
    return min(r0 / 4.0, 0.05 / math.sqrt(rho))


def default_dt(dx: float, epsilon: float, factor: float = 0.2) -> float:
    return factor * epsilon * dx * dx


class Tag(str, enum.Enum):
    PINNED = "Pinned"
    BALLISTIC = "Ballistic"
    UNDECIDED = "Undecided"


@dataclass
class Outcome:
    tag: Tag
    final_state: FrontState
    t_decided: float
    steps: int
    mean_velocity: Optional[float] = None
    exact_stick: bool = False
    max_velocity: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def is_ballistic(self) -> bool:
        return self.tag is Tag.BALLISTIC

    def to_record(self) -> dict:
        return {
            "tag": self.tag.value,
            "t_decided": self.t_decided,
            "steps": self.steps,
            "mean_velocity": self.mean_velocity,
            "exact_stick": self.exact_stick,
            "max_velocity": self.max_velocity,
            "flags": list(self.flags),
        }


# --------------------------------------------------------------------------
# Pointwise pieces


def half_node_slopes(u: np.ndarray, dx: float) -> np.ndarray:
    """Slopes ``s_{i+1/2} = (u_{i+1} - u_i) / dx`` with periodic wrap."""
    return (np.roll(u, -1) - u) / dx


def graph_curvature(state: FrontState, i: Optional[int] = None):
    """Discrete ``d/dx (u_x / sqrt(1 + u_x^2))`` at node ``i`` (or all nodes)."""
    s = half_node_slopes(state.heights, state.dx)
    nh = s / np.sqrt(1.0 + s * s)
    kappa = (nh - np.roll(nh, 1)) / state.dx
    return kappa if i is None else float(kappa[i])


def node_friction(state: FrontState, field: ObstacleField) -> np.ndarray:
    return np.asarray(field.phi(state.node_x(field.width), state.heights), dtype=float)


def sticking_set(state: FrontState, field: ObstacleField, kinetics: KineticRelation, force: float) -> np.ndarray:
    """Boolean mask of nodes where ``|kappa + F| <= tau + phi``."""
    b = graph_curvature(state) + force
    return np.abs(b) <= kinetics.tau + node_friction(state, field)


def _check_geometry(state: FrontState, field: ObstacleField) -> None:
    if abs(state.width - field.width) > 1e-9 * field.width:
        raise ValueError(f"front period {state.width} differs from field width {field.width}")


class _Runner:
    """Holds kernel buffers for repeated stepping of one front on one field."""

    def __init__(self, state: FrontState, field: ObstacleField, kinetics: KineticRelation,
                 force: float, dt: float, slope_max: float = 10.0, tol_v: float = 0.0,
                 still_needed: int = 1, h_ball: float = math.inf):
        _check_geometry(state, field)
        self.state = state.copy()
        self.field = field
        self.kin = kinetics
        self.force = float(force)
        self.dt = float(dt)
        self.slope_max = slope_max
        self.tol_v = tol_v
        self.still_needed = still_needed
        self.h_ball = h_ball
        n = state.n
        self.u = self.state.heights
        self.v = np.zeros(n)
        self.phi = np.zeros(n)
        self.moved = np.ones(n, dtype=np.uint8)
        self.xw = self.state.node_x(field.width)
        self.still = 0
        self.steps = 0
        self.t0 = state.time

    def advance(self, n_steps: int) -> tuple[int, int]:
        done = 0
        while True:
            tab = self.field.tables
            k, status, self.still = kernels.advance(
                self.u, self.v, self.phi, self.xw, self.state.dx, self.dt, self.force,
                self.kin.tau, self.kin.epsilon, n_steps - done, tab, tab.y_lo, tab.y_hi,
                self.h_ball, self.slope_max, self.tol_v, self.still_needed, self.still,
                self.moved)
            done += k
            self.steps += k
            self.state.time = self.t0 + self.steps * self.dt
            if status == kernels.ST_NEED_BAND:
                lo, hi = float(self.u.min()), float(self.u.max())
                self.field.ensure_band(lo, hi + self.field.strip_height)
                self.moved[:] = 1
                continue
            if status == kernels.ST_NAN:
                raise FloatingPointError(f"non-finite front height after {self.steps} steps")
            return done, status


def step(state: FrontState, field: ObstacleField, kinetics: KineticRelation, force: float,
         dt: float, slope_max: float = 10.0) -> FrontState:
    """One explicit step; returns a new state.

    Raises ``FloatingPointError`` on NaN and ``RuntimeError`` when a slope
    exceeds ``slope_max``.
    """
    r = _Runner(state, field, kinetics, force, dt, slope_max=slope_max, tol_v=-1.0)
    _, status = r.advance(1)
    if status == kernels.ST_SLOPE:
        raise RuntimeError(f"slope cap {slope_max} exceeded")
    return r.state


def step_velocities(state: FrontState, field: ObstacleField, kinetics: KineticRelation,
                    force: float) -> np.ndarray:
    """Nodal normal velocities the scheme assigns to ``state``."""
    b = graph_curvature(state) + force
    lam = kinetics.tau + node_friction(state, field)
    return prox_dry_friction(b, lam, kinetics.epsilon)


# --------------------------------------------------------------------------
# Runs


class SnapshotWriter:
    """CSV trajectory frames ``t, u_0, ..., u_{n-1}`` every ``stride`` steps."""

    def __init__(self, fh: TextIO, n: int, stride: int, comment: Optional[str] = None):
        if stride < 1:
            raise ValueError("snapshot stride must be >= 1")
        self.stride = stride
        self.frames = 0
        self._w = csv.writer(fh, lineterminator="\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        self._w.writerow(["t"] + [f"u{i}" for i in range(n)])

    def write(self, t: float, u: np.ndarray) -> None:
        self._w.writerow([repr(float(t))] + [repr(float(x)) for x in u])
        self.frames += 1


def _mean_velocity(history: list[tuple[float, float]], t_end: float) -> Optional[float]:
    if len(history) < 2 or t_end <= 0:
        return None
    ts = np.array([h[0] for h in history])
    ms = np.array([h[1] for h in history])
    t_start = 0.8 * t_end
    m_start = float(np.interp(t_start, ts, ms))
    return (ms[-1] - m_start) / (ts[-1] - t_start)


def run(field: ObstacleField, kinetics: KineticRelation, force: float, cfg: SimConfig,
        state0: Optional[FrontState] = None, dx: Optional[float] = None,
        snapshots: Optional[SnapshotWriter] = None,
        monitor: Optional[Callable[[float, np.ndarray], None]] = None) -> Outcome:
    """Evolve from ``state0`` (flat ``u = 0`` by default) until a decision.

    Ballistic when every node has reached ``cfg.h_ballistic``; pinned when
    the maximal nodal speed stays ``<= cfg.tol_v`` for
    ``cfg.pinned_confirm_steps`` consecutive steps; undecided at ``t_max``.
    ``monitor(t, u)`` is called after every chunk of steps.
    """
    if state0 is None:
        dx = dx if dx is not None else default_dx(field.params.rho, field.params.r0)
        state0 = FrontState.flat(field.width, dx)
    cfg.check_cfl(state0.dx, kinetics.epsilon)
    field.ensure_band(float(state0.heights.min()), float(state0.heights.max()))
    r = _Runner(state0, field, kinetics, force, cfg.dt, slope_max=cfg.slope_max,
                tol_v=cfg.tol_v, still_needed=cfg.pinned_confirm_steps, h_ball=cfg.h_ballistic)
    history = [(0.0, float(r.u.mean()))]
    flags: list[str] = []
    max_steps = cfg.max_steps
    if snapshots is not None:
        snapshots.write(r.state.time, r.u)
    status = kernels.ST_RUNNING
    if float(r.u.min()) >= cfg.h_ballistic:
        status = kernels.ST_BALLISTIC
    while status == kernels.ST_RUNNING and r.steps < max_steps:
        chunk = min(cfg.chunk_steps, max_steps - r.steps)
        if snapshots is not None:
            to_next = snapshots.stride - (r.steps % snapshots.stride)
            chunk = min(chunk, to_next)
        _, status = r.advance(chunk)
        history.append((r.steps * cfg.dt, float(r.u.mean())))
        if monitor is not None:
            monitor(r.steps * cfg.dt, r.u)
        if snapshots is not None and r.steps % snapshots.stride == 0:
            snapshots.write(r.state.time, r.u)
    t_dec = r.steps * cfg.dt
    vmax = float(np.abs(r.v).max()) if r.steps else 0.0
    if status == kernels.ST_PINNED:
        tag = Tag.PINNED
    elif status == kernels.ST_BALLISTIC:
        tag = Tag.BALLISTIC
    else:
        tag = Tag.UNDECIDED
        if status == kernels.ST_SLOPE:
            flags.append("slope_cap")
            logger.warning("slope cap %.3g exceeded at t=%.4g (F=%.6g)", cfg.slope_max, t_dec, force)
        else:
            flags.append("t_max")
    out = Outcome(tag, r.state, t_dec, r.steps, exact_stick=(tag is Tag.PINNED and vmax == 0.0),
                  max_velocity=vmax, flags=flags)
    if tag is Tag.BALLISTIC:
        out.mean_velocity = _mean_velocity(history, t_dec)
    return out


def verify_monotone(field: ObstacleField, kinetics: KineticRelation, force: float,
                    u0: FrontState, v0: FrontState, steps: int, dt: float,
                    slope_max: float = 10.0) -> bool:
    """Evolve two nodewise-ordered fronts side by side and check the order holds.

    Returns False as soon as ``u > v`` at some node after some step.
    """
    if u0.n != v0.n or u0.dx != v0.dx:
        raise ValueError("fronts must share the grid")
    if np.any(u0.heights > v0.heights):
        raise ValueError("initial fronts are not ordered")
    lo = float(min(u0.heights.min(), v0.heights.min()))
    hi = float(max(u0.heights.max(), v0.heights.max()))
    field.ensure_band(lo, hi + field.strip_height)
    ra = _Runner(u0, field, kinetics, force, dt, slope_max=slope_max, tol_v=-1.0)
    rb = _Runner(v0, field, kinetics, force, dt, slope_max=slope_max, tol_v=-1.0)
    for _ in range(steps):
        _, sa = ra.advance(1)
        _, sb = rb.advance(1)
        if sa == kernels.ST_SLOPE or sb == kernels.ST_SLOPE:
            raise RuntimeError("slope cap exceeded during comparison run")
        if np.any(ra.u > rb.u):
            return False
    return True
