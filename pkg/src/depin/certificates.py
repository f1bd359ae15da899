"""Per-realisation certificates for the depinning threshold.

Two constructions are checked numerically on a concrete obstacle field:

* a stationary *barrier* (a graph supersolution) built from circular caps
  inside selected obstacles joined by concave circular connectors; a front
  starting below it can never pass it, so forces up to ``F_certified`` pin;
* an obstacle-free *path* of square cubes of side ``h``; inside it an explicit
  propagating subsolution moves up at speed ``v0`` whenever
  ``F > tau + 2/h``, so forces above ``F_ub`` are ballistic.

All geometry is sampled and re-verified rather than trusted symbolically.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .front_dynamics import KineticRelation, default_dx
from .obstacle_field import ObstacleField, ObstacleParams

logger = logging.getLogger(__name__)

CONNECTOR = "connector-arc"
CAP = "obstacle-cap"
CHORD = "chord"
_KINDS = (CONNECTOR, CAP, CHORD)

P_C_LOWER = 15.0 / 16.0
# placeholder for the unstated percolation threshold of the upper bound
P_C_UPPER = 0.9375
RESIDUAL_TOL = 1e-12


class Infeasible(ValueError):
    """A local construction violates its feasibility condition."""


# --------------------------------------------------------------------------
# Graph segments


@dataclass(frozen=True)
class ArcSegment:
    """Graph of a circular arc (or a straight chord) over ``[a, b]``.

    ``concavity`` is -1 for connector arcs (upper arcs, ``u'' < 0``), +1 for
    obstacle caps (lower arcs, ``u'' > 0``) and 0 for chords.  Values are
    anchored at the left endpoint ``(a, ya)`` so that evaluation stays
    accurate even for very flat arcs.
    """

    kind: str
    xc: float
    yc: float
    radius: float
    a: float
    b: float
    concavity: int
    ya: float
    yb: float

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.a < self.b:
            raise ValueError(f"empty interval [{self.a}, {self.b}]")
        if self.kind == CHORD and self.concavity != 0:
            raise ValueError("chords have concavity 0")

    @property
    def curvature(self) -> float:
        """Signed ``d/dx (u' / sqrt(1 + u'^2))``: ``+1/R`` on caps, ``-1/R`` on connectors."""
        if self.concavity == 0:
            return 0.0
        return self.concavity / self.radius

    def _root(self, t):
        r = self.radius
        return np.sqrt(np.maximum((r - t) * (r + t), 0.0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.concavity == 0:
            out = self.ya + (self.yb - self.ya) * ((x - self.a) / (self.b - self.a))
        else:
            t = x - self.xc
            ta = self.a - self.xc
            out = self.ya - self.concavity * (ta - t) * (ta + t) / (self._root(t) + self._root(ta))
        return float(out) if out.ndim == 0 else out

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        if self.concavity == 0:
            out = np.full(x.shape, (self.yb - self.ya) / (self.b - self.a))
        else:
            t = x - self.xc
            out = self.concavity * t / self._root(t)
        return float(out) if out.ndim == 0 else out

    def shifted(self, dx: float) -> "ArcSegment":
        return ArcSegment(self.kind, self.xc + dx, self.yc, self.radius, self.a + dx,
                          self.b + dx, self.concavity, self.ya, self.yb)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(self.radius):
            d["radius"] = None
        for k in ("xc", "yc"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArcSegment":
        d = dict(d)
        d["radius"] = math.inf if d["radius"] is None else d["radius"]
        for k in ("xc", "yc"):
            d[k] = math.nan if d[k] is None else d[k]
        return cls(**d)


def _chord(p1, p2) -> ArcSegment:
    return ArcSegment(CHORD, math.nan, math.nan, math.inf, p1[0], p2[0], 0, p1[1], p2[1])


def obstacle_cap(center: Sequence[float], r: float, F_in: float,
                 max_slope: float = 1e6) -> ArcSegment:
    """Convex cap of curvature ``F_in`` through ``center +- (r, 0)``.

    Its endpoint slopes are ``+-r / sqrt(F_in^-2 - r^2)``.  Raises
    :class:`Infeasible` when ``F_in * r > 1`` or when the endpoint slope
    exceeds ``max_slope`` (the vertical-tangent limit ``F_in = 1/r``).
    """
    cx, cy = float(center[0]), float(center[1])
    if not r > 0:
        raise ValueError(f"cap half-width must be > 0, got {r}")
    if F_in < 0:
        raise ValueError(f"F_in must be >= 0, got {F_in}")
    if F_in == 0:
        return _chord((cx - r, cy), (cx + r, cy))
    if F_in * r > 1.0:
        raise Infeasible(f"F_in * r = {F_in * r} > 1")
    big_r = 1.0 / F_in
    depth = math.sqrt(max((big_r - r) * (big_r + r), 0.0))
    if depth == 0.0 or r / depth > max_slope:
        raise Infeasible(f"cap endpoint slope exceeds {max_slope} (F_in = {F_in}, r = {r})")
    return ArcSegment(CAP, cx, cy + depth, big_r, cx - r, cx + r, 1, cy, cy)


def cap_slope(r: float, F_in: float) -> float:
    """Outward endpoint slope ``alpha = r / sqrt(F_in^-2 - r^2)`` of a cap."""
    if F_in == 0:
        return 0.0
    big_r = 1.0 / F_in
    return r / math.sqrt((big_r - r) * (big_r + r))


def arc_connect(p1: Sequence[float], p2: Sequence[float], kappa: float,
                alpha: float) -> Optional[ArcSegment]:
    """Concave arc of curvature ``kappa`` joining ``p1`` and ``p2``.

    Feasible when ``kappa <= 2 xb / (xb^2 + yb^2)`` and the endpoint slopes
    stay within ``alpha`` (left slope ``<= alpha``, right slope ``>= -alpha``).
    Returns None when infeasible.  ``kappa = 0`` gives the straight chord.
    """
    x1, y1 = float(p1[0]), float(p1[1])
    x2, y2 = float(p2[0]), float(p2[1])
    if x1 == x2:
        raise ValueError("endpoints must differ in x")
    if kappa < 0 or alpha < 0:
        raise ValueError("kappa and alpha must be >= 0")
    if x1 > x2:
        x1, y1, x2, y2 = x2, y2, x1, y1
    xb = x2 - x1
    yb = abs(y2 - y1)
    if kappa == 0:
        if abs(y2 - y1) / xb > alpha:
            return None
        return _chord((x1, y1), (x2, y2))
    c2 = xb * xb + yb * yb
    if kappa > 2.0 * xb / c2:
        return None
    # kappa * sqrt(kappa^-2 / c2 - 1/4), written to avoid kappa^-2 overflow
    q = math.sqrt(max(1.0 / c2 - 0.25 * kappa * kappa, 0.0))
    if alpha / math.sqrt(1.0 + alpha * alpha) < 0.5 * kappa * xb + yb * q:
        return None
    ell = 0.5 * xb + yb * q / kappa
    big_r = 1.0 / kappa
    drop = math.sqrt(max((big_r - ell) * (big_r + ell), 0.0))
    if y1 <= y2:
        xc, yc = x1 + ell, y1 - drop
    else:
        xc, yc = x2 - ell, y2 - drop
    return ArcSegment(CONNECTOR, xc, yc, big_r, x1, x2, -1, y1, y2)


# --------------------------------------------------------------------------
# Lipschitz selection of occupied cubes


def minimal_lipschitz(occupied: np.ndarray, periodic: bool = True) -> Optional[np.ndarray]:
    """Least 1-Lipschitz ``L`` (rows numbered from 1) with every ``occupied[k, L(k)-1]``.

    Iterated constraint propagation: raise ``L(k)`` past empty cubes and to
    ``L(k +- 1) - 1`` until nothing changes.  Returns None when some ``L(k)``
    would exceed the number of rows.
    """
    occ = np.asarray(occupied, dtype=bool)
    n, j_max = occ.shape
    if n == 0:
        return None
    L = np.ones(n, dtype=np.int64)
    changed = True
    while changed:
        changed = False
        for k in range(n):
            j = int(L[k])
            while j <= j_max and not occ[k, j - 1]:
                j += 1
            nbrs = []
            if periodic:
                nbrs = [(k - 1) % n, (k + 1) % n]
            else:
                nbrs = [m for m in (k - 1, k + 1) if 0 <= m < n]
            for m in nbrs:
                j = max(j, int(L[m]) - 1)
            if j > j_max:
                return None
            if j != L[k]:
                L[k] = j
                changed = True
    return L


@dataclass(frozen=True)
class CubeLayout:
    """Columns ``[k(l+d) + r1, k(l+d) + l - r1]`` and rows ``[(j-1)h + r1, jh + r1]``."""

    l: float
    d: float
    h: float
    r1: float
    n_cols: int
    j_max: int

    def column(self, k: int) -> tuple[float, float]:
        x0 = k * (self.l + self.d)
        return x0 + self.r1, x0 + self.l - self.r1

    def row(self, j: int) -> tuple[float, float]:
        return (j - 1) * self.h + self.r1, j * self.h + self.r1

    def members(self, centers: np.ndarray, k: int, j: int) -> np.ndarray:
        x0, x1 = self.column(k)
        y0, y1 = self.row(j)
        c = centers
        sel = (c[:, 0] >= x0) & (c[:, 0] <= x1) & (c[:, 1] >= y0) & (c[:, 1] <= y1)
        return c[sel]

    def occupancy(self, centers: np.ndarray) -> np.ndarray:
        occ = np.zeros((self.n_cols, self.j_max), dtype=bool)
        for k in range(self.n_cols):
            x0, x1 = self.column(k)
            inx = centers[(centers[:, 0] >= x0) & (centers[:, 0] <= x1)]
            for j in range(1, self.j_max + 1):
                y0, y1 = self.row(j)
                occ[k, j - 1] = bool(np.any((inx[:, 1] >= y0) & (inx[:, 1] <= y1)))
        return occ


def find_lipschitz_selection(field: ObstacleField, l: float, d: float, h: float, r1: float,
                             j_max: int = 32, n_cols: Optional[int] = None) -> Optional[np.ndarray]:
    """Minimal 1-Lipschitz row selection with an obstacle centre in every selected cube.

    Columns are periodic across the window; ``n_cols`` defaults to
    ``floor(W / (l + d))``.
    """
    if n_cols is None:
        n_cols = int(math.floor(field.width / (l + d)))
    if n_cols < 1:
        return None
    layout = CubeLayout(l, d, h, r1, n_cols, j_max)
    field.ensure_band(0.0, j_max * h + r1)
    return minimal_lipschitz(layout.occupancy(field.centers), periodic=True)


# --------------------------------------------------------------------------
# Barrier


@dataclass(frozen=True)
class BarrierGeometry:
    F_in: float
    r: float
    alpha: float
    C0: float
    h: float
    d: float
    l: float
    F_out: float
    p_c: float
    n_cols: int
    d_eff: float


def barrier_geometry(params: ObstacleParams, width: float, p_c: float = P_C_LOWER) -> BarrierGeometry:
    """Cube sizes and curvatures of the barrier recipe.

    ``d`` is stretched to ``d_eff`` so that a whole number of columns fills
    the periodic window.
    """
    f = params.f
    F_in = 0.5 * f
    r = min(params.r0, 2.0 / f) if f > 0 else params.r0
    C0 = -math.log(1.0 - p_c) / params.rho
    fr = F_in * r
    h = math.sqrt(2.0) * math.sqrt(fr) * math.sqrt(C0)
    d = 2.0 * C0 / h if h > 0 else math.inf
    l = C0 / h + 2.0 * params.r1 if h > 0 else math.inf
    F_out = math.sqrt(2.0) * fr ** 1.5 / 4.0 / math.sqrt(C0)
    alpha = cap_slope(r, F_in) if F_in * r < 1 else math.inf
    n_cols = int(math.floor(width / (l + d))) if math.isfinite(l + d) else 0
    d_eff = width / n_cols - l if n_cols > 0 else d
    return BarrierGeometry(F_in, r, alpha, C0, h, d, l, F_out, p_c, n_cols, d_eff)


@dataclass
class ResidualReport:
    min_residual: float
    argmin: tuple
    concavity_margin: float
    max_gap: float
    caps_inside: bool
    n_samples: int
    ok: bool
    failures: list = field(default_factory=list)


@dataclass
class Barrier:
    """Periodic graph made of segments covering ``[x_start, x_start + width)``."""

    segments: list
    width: float
    tau: float
    geometry: Optional[BarrierGeometry] = None
    selection: Optional[np.ndarray] = None
    obstacles: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("a barrier needs at least one segment")
        self._starts = np.array([s.a for s in self.segments])

    @property
    def x_start(self) -> float:
        return self.segments[0].a

    def junctions(self) -> list[tuple[float, float, float, float]]:
        """``(x, left slope, right slope, gap)`` at every junction, wrap included."""
        out = []
        n = len(self.segments)
        for i in range(n):
            left = self.segments[i]
            right = self.segments[(i + 1) % n]
            if i == n - 1:
                right = right.shifted(self.width)
            x = left.b
            gap = abs(left(left.b) - right(right.a)) + abs(left.b - right.a)
            out.append((x, left.slope(left.b), right.slope(right.a), gap))
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = self.x_start + np.mod(x - self.x_start, self.width)
        idx = np.clip(np.searchsorted(self._starts, xs, side="right") - 1, 0, len(self.segments) - 1)
        out = np.empty_like(xs)
        for i in np.unique(idx):
            m = idx == i
            seg = self.segments[int(i)]
            out[m] = seg(np.clip(xs[m], seg.a, seg.b))
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "tau": self.tau,
            "geometry": None if self.geometry is None else asdict(self.geometry),
            "selection": None if self.selection is None else [int(v) for v in self.selection],
            "obstacles": None if self.obstacles is None else np.asarray(self.obstacles).tolist(),
            "segments": [s.to_dict() for s in self.segments],
            "junctions": [list(j) for j in self.junctions()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Barrier":
        geo = None if d.get("geometry") is None else BarrierGeometry(**d["geometry"])
        sel = None if d.get("selection") is None else np.asarray(d["selection"], dtype=np.int64)
        obs = None if d.get("obstacles") is None else np.asarray(d["obstacles"], dtype=float)
        return cls([ArcSegment.from_dict(s) for s in d["segments"]], d["width"], d["tau"],
                   geo, sel, obs)


@dataclass
class LowerCert:
    F_certified: float
    barrier: Barrier
    report: ResidualReport

    @property
    def F_tilde(self) -> float:
        return self.F_certified - self.barrier.tau

    def to_dict(self) -> dict:
        return {"type": "lower", "F_certified": self.F_certified, "F_tilde": self.F_tilde,
                "barrier": self.barrier.to_dict(), "report": asdict(self.report)}


def _sample_points(seg: ArcSegment, samples: int, refine: int, rng) -> np.ndarray:
    span = seg.b - seg.a
    if rng is None:
        base = np.linspace(0.0, 1.0, samples)
    else:
        base = np.concatenate([[0.0, 1.0], rng.random(samples - 2)])
    near = np.geomspace(1e-6, 1e-2, refine) if refine > 0 else np.empty(0)
    u = np.concatenate([base, near, 1.0 - near])
    return seg.a + span * np.sort(u)


def verify_supersolution(barrier: Barrier, field: ObstacleField, F: float, samples: int = 64,
                         refine: int = 16, rng: Optional[np.random.Generator] = None,
                         tol: float = RESIDUAL_TOL, gap_tol: Optional[float] = None) -> ResidualReport:
    """Pointwise check of ``-kappa + phi >= F - tau`` along the barrier.

    Samples ``samples`` points per segment (random interior points when
    ``rng`` is given) plus ``refine`` points clustered at each end, and checks
    continuity and the concave-corner condition at every junction.
    """
    if samples < 2:
        raise ValueError("need at least two samples per segment")
    F_t = F - barrier.tau
    if gap_tol is None:
        gap_tol = 1e-10 * default_dx(field.params.rho, field.params.r0)
    failures = []
    min_res = math.inf
    argmin: tuple = ()
    caps_inside = True
    n = 0
    for i, seg in enumerate(barrier.segments):
        xs = _sample_points(seg, samples, refine, rng)
        ys = seg(xs)
        phi = np.asarray(field.phi(np.mod(xs, field.width), ys), dtype=float)
        # residual of -kappa + phi - F~; caps bend up (kappa = +F_in), connectors down
        res = -seg.curvature + phi - F_t
        n += xs.size
        j = int(np.argmin(res))
        if res[j] < min_res:
            min_res = float(res[j])
            argmin = (i, float(xs[j]), float(ys[j]))
        if seg.kind == CAP and not np.all(phi == field.params.f):
            caps_inside = False
            failures.append(f"cap {i} leaves the phi = f core")
        if res[j] < -tol:
            failures.append(f"segment {i} ({seg.kind}) residual {res[j]:.3e} at x={xs[j]:.6g}")
    conc = math.inf
    max_gap = 0.0
    for x, sl, sr, gap in barrier.junctions():
        conc = min(conc, sl - sr)
        max_gap = max(max_gap, gap)
        if sl - sr < -tol:
            failures.append(f"convex corner at x={x:.6g}: slopes {sl:.6g} -> {sr:.6g}")
        if gap > gap_tol:
            failures.append(f"gap {gap:.3e} at x={x:.6g}")
    ok = not failures
    return ResidualReport(min_res, argmin, conc, max_gap, caps_inside, n, ok, failures)


def _choose_obstacles(cands: list[np.ndarray], r: float, kappa: float, alpha: float,
                      width: float) -> Optional[list[np.ndarray]]:
    """One obstacle per column such that every connector arc is feasible (cyclic)."""
    n = len(cands)

    def ok(p, q, shift=0.0):
        return arc_connect((p[0] + r, p[1]), (q[0] + shift - r, q[1]), kappa, alpha) is not None

    for c0 in cands[0]:
        layers = [[(c0, -1)]]
        for k in range(1, n):
            nxt = []
            for q in cands[k]:
                for ip, (p, _) in enumerate(layers[-1]):
                    if ok(p, q):
                        nxt.append((q, ip))
                        break
            if not nxt:
                break
            layers.append(nxt)
        if len(layers) < n:
            continue
        for iq, (q, _) in enumerate(layers[-1]):
            if ok(q, c0, width):
                chosen = [q]
                ip = layers[-1][iq][1]
                for k in range(n - 2, -1, -1):
                    p, ip_next = layers[k][ip]
                    chosen.append(p)
                    ip = ip_next
                return chosen[::-1]
    return None


def build_barrier(field: ObstacleField, F: float, kinetics: KineticRelation = KineticRelation(),
                  p_c: float = P_C_LOWER, j_max: int = 32, samples: int = 64) -> Optional[LowerCert]:
    """Try to certify pinning at force ``F`` with a cap-and-connector barrier.

    Connector curvature is ``max(F_out, F - tau)``.  Returns None when no
    Lipschitz selection exists, no feasible choice of obstacles exists, or
    the sampled verification fails.
    """
    tau = kinetics.tau
    if F < tau:
        raise ValueError(f"F={F} below tau={tau}")
    F_t = F - tau
    p = field.params
    geo = barrier_geometry(p, field.width, p_c)
    if p.f == 0 or geo.n_cols < 1 or not math.isfinite(geo.alpha):
        return None
    if F_t > p.f - geo.F_in:
        return None
    kappa = max(geo.F_out, F_t)
    layout = CubeLayout(geo.l, geo.d_eff, geo.h, p.r1, geo.n_cols, j_max)
    field.ensure_band(0.0, j_max * geo.h + p.r1)
    L = minimal_lipschitz(layout.occupancy(field.centers), periodic=True)
    if L is None:
        return None
    cands = []
    for k in range(geo.n_cols):
        m = layout.members(field.centers, k, int(L[k]))
        order = np.lexsort((m[:, 0], m[:, 1]))
        cands.append(m[order])
    chosen = _choose_obstacles(cands, geo.r, kappa, geo.alpha, field.width)
    if chosen is None:
        logger.debug("seed %s: no feasible connector chain at F=%g", p.seed, F)
        return None
    segs: list[ArcSegment] = []
    n = len(chosen)
    for k, c in enumerate(chosen):
        segs.append(obstacle_cap(c, geo.r, geo.F_in))
        nxt = chosen[(k + 1) % n]
        shift = field.width if k == n - 1 else 0.0
        arc = arc_connect((c[0] + geo.r, c[1]), (nxt[0] + shift - geo.r, nxt[1]), kappa, geo.alpha)
        segs.append(arc)
    barrier = Barrier(segs, field.width, tau, geo, L, np.array(chosen))
    report = verify_supersolution(barrier, field, F, samples=samples)
    if not report.ok:
        logger.debug("seed %s: barrier rejected at F=%g: %s", p.seed, F, report.failures[:3])
        return None
    return LowerCert(tau + F_t, barrier, report)


def best_lower_certificate(field: ObstacleField, kinetics: KineticRelation = KineticRelation(),
                           tol: float = 1e-4, **kw) -> Optional[LowerCert]:
    """Largest certified force found by bisecting the feasibility of :func:`build_barrier`."""
    tau = kinetics.tau
    best = build_barrier(field, tau, kinetics, **kw)
    if best is None:
        return None
    lo, hi = tau, tau + 0.5 * field.params.f
    top = build_barrier(field, hi, kinetics, **kw)
    if top is not None:
        return top
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cert = build_barrier(field, mid, kinetics, **kw)
        if cert is None:
            hi = mid
        else:
            lo, best = mid, cert
    return best


# --------------------------------------------------------------------------
# Free paths and the propagating subsolution


@dataclass
class PathCert:
    h: float
    cubes: list
    F_ub: float
    tau: float
    n_cols: int
    n_rows: int
    periodic: bool
    rule: str = "dilated"
    v0: Optional[float] = None

    def to_dict(self) -> dict:
        return {"type": "upper", "h": self.h, "cubes": [list(c) for c in self.cubes],
                "F_ub": self.F_ub, "tau": self.tau, "n_cols": self.n_cols, "n_rows": self.n_rows,
                "periodic": self.periodic, "rule": self.rule, "v0": self.v0}

    @classmethod
    def from_dict(cls, d: dict) -> "PathCert":
        d = {k: v for k, v in d.items() if k != "type"}
        d["cubes"] = [tuple(c) for c in d["cubes"]]
        return cls(**d)


def _grid(field: ObstacleField, h: float) -> tuple[int, bool]:
    n_cols = int(math.floor(field.width / h * (1 + 1e-12)))
    periodic = abs(n_cols * h - field.width) <= 1e-9 * field.width
    return n_cols, periodic


def _rect_dist2(cx, cy, x0, x1, y0, y1, width=None):
    dx = np.maximum(np.maximum(x0 - cx, cx - x1), 0.0)
    if width is not None:
        # periodic images left and right
        dxl = np.maximum(np.maximum(x0 - (cx - width), (cx - width) - x1), 0.0)
        dxr = np.maximum(np.maximum(x0 - (cx + width), (cx + width) - x1), 0.0)
        dx = np.minimum(dx, np.minimum(dxl, dxr))
    dy = np.maximum(np.maximum(y0 - cy, cy - y1), 0.0)
    return dx * dx + dy * dy


def open_sites(field: ObstacleField, h: float, n_rows: int, rule: str = "dilated") -> np.ndarray:
    """Boolean ``(n_cols, n_rows)`` grid of open cubes ``[kh, (k+1)h] x [lh, (l+1)h]``.

    ``dilated``: no centre within ``r1`` of the cube.  ``cross``: the cube and
    its four neighbours contain no centre.
    """
    n_cols, periodic = _grid(field, h)
    if n_cols < 1:
        raise ValueError(f"cube side {h} exceeds the window {field.width}")
    r1 = field.params.r1
    margin = max(r1, h)
    field.ensure_band(-margin, n_rows * h + margin)
    c = field.centers
    op = np.ones((n_cols, n_rows), dtype=bool)
    W = field.width if periodic else None
    if rule == "dilated":
        reach = int(math.ceil(r1 / h)) + 1
        for x, y in c:
            k0 = int(math.floor(x / h))
            l0 = int(math.floor(y / h))
            for l in range(l0 - reach, l0 + reach + 1):
                if not 0 <= l < n_rows:
                    continue
                for kk in range(k0 - reach, k0 + reach + 1):
                    k = kk % n_cols if periodic else kk
                    if not 0 <= k < n_cols or not op[k, l]:
                        continue
                    d2 = _rect_dist2(x, y, k * h, (k + 1) * h, l * h, (l + 1) * h, W)
                    if d2 < r1 * r1:
                        op[k, l] = False
    elif rule == "cross":
        occ = np.zeros((n_cols, n_rows + 2), dtype=bool)  # rows -1 .. n_rows
        for x, y in c:
            k = int(math.floor(x / h))
            l = int(math.floor(y / h)) + 1
            if 0 <= k < n_cols and 0 <= l < n_rows + 2:
                occ[k, l] = True
        mid = occ[:, 1:-1]
        blocked = mid | occ[:, :-2] | occ[:, 2:]
        if periodic:
            blocked = blocked | np.roll(mid, 1, axis=0) | np.roll(mid, -1, axis=0)
        else:
            blocked[1:] |= mid[:-1]
            blocked[:-1] |= mid[1:]
        op = ~blocked
    else:
        raise ValueError(f"unknown openness rule {rule!r}")
    return op


def cube_is_clear(field: ObstacleField, cube: tuple, h: float) -> bool:
    """Exact check that no centre lies within ``r1`` of the cube."""
    k, l = cube
    c = field.centers
    n_cols, periodic = _grid(field, h)
    d2 = _rect_dist2(c[:, 0], c[:, 1], k * h, (k + 1) * h, l * h, (l + 1) * h,
                     field.width if periodic else None)
    r1 = field.params.r1
    return bool(np.all(d2 >= r1 * r1))


def find_free_path(field: ObstacleField, h: float, tau: float = 0.0, height: Optional[float] = None,
                   rule: str = "dilated") -> Optional[PathCert]:
    """Breadth-first search for a path of open cubes from row 0 to the top row.

    Moves are ``(-1, 0)``, ``(1, 0)`` and ``(0, 1)``; x wraps when ``h``
    divides the window.  ``height`` defaults to the generated band.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    height = field.domain.y_max if height is None else height
    n_rows = max(1, int(math.ceil(height / h - 1e-12)))
    n_cols, periodic = _grid(field, h)
    if n_cols < 1:
        return None
    r1 = field.params.r1
    limit = (-0.2 * math.log(P_C_UPPER)) ** 0.5 / math.sqrt(field.params.rho)
    if not 2 * r1 < limit:
        logger.debug("2*r1=%g not below the percolation width %g", 2 * r1, limit)
    op = open_sites(field, h, n_rows, rule)
    parent: dict = {}
    q: deque = deque()
    for k in range(n_cols):
        if op[k, 0]:
            parent[(k, 0)] = None
            q.append((k, 0))
    goal = None
    while q:
        k, l = q.popleft()
        if l == n_rows - 1:
            goal = (k, l)
            break
        for dk, dl in ((-1, 0), (1, 0), (0, 1)):
            kk, ll = k + dk, l + dl
            if periodic:
                kk %= n_cols
            if not 0 <= kk < n_cols or (kk, ll) in parent or not op[kk, ll]:
                continue
            parent[(kk, ll)] = (k, l)
            q.append((kk, ll))
    if goal is None:
        return None
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    if not all(cube_is_clear(field, c, h) for c in path):
        raise AssertionError("open-site grid disagrees with the geometric recheck")
    return PathCert(h, path, tau + 2.0 / h, tau, n_cols, n_rows, periodic, rule)


def best_upper_certificate(field: ObstacleField, tau: float = 0.0, height: Optional[float] = None,
                           n_max: Optional[int] = None, rule: str = "dilated") -> Optional[PathCert]:
    """Widest path over cube sides ``h = W/n``, ``n = 1, 2, ...``; smallest ``F_ub``."""
    r1 = field.params.r1
    if n_max is None:
        n_max = int(math.floor(field.width / (0.5 * r1)))
    for n in range(1, n_max + 1):
        cert = find_free_path(field, field.width / n, tau, height, rule)
        if cert is not None:
            return cert
    return None


def path_steps(cubes: Sequence[tuple]) -> list[tuple[int, int]]:
    """Moves between consecutive cubes, with periodic jumps folded to +-1."""
    out = []
    for (k0, l0), (k1, l1) in zip(cubes[:-1], cubes[1:]):
        dk = k1 - k0
        if abs(dk) > 1:
            dk = -int(np.sign(dk))
        out.append((dk, l1 - l0))
    return out


def kappa_bulge(t: float, v0: float, h: float) -> float:
    """Curvature of the initial bulge, ``2 v0 t / (v0^2 t^2 + (h/2)^2)``."""
    a = 0.5 * h
    return 2.0 * v0 * t / (v0 * v0 * t * t + a * a)


@dataclass
class EvolutionStage:
    kind: str  # "init", "pass" or "capped"
    cube: tuple
    origin: tuple
    e_up: tuple
    t0: float
    t1: float


@dataclass
class PathEvolution:
    stages: list
    h: float
    v0: float
    F: float
    tau: float
    epsilon: float
    min_margin: float
    min_margin_by_kind: dict
    n_samples: int
    kappa_handover: float

    @property
    def ok(self) -> bool:
        return self.min_margin >= 0.0

    def local_curve(self, stage: EvolutionStage, t: float, n: int = 65) -> np.ndarray:
        """Curve points in the stage frame (bulge or translated arc plus walls)."""
        a = 0.5 * self.h
        x = np.linspace(-a, a, n)
        if stage.kind == "init":
            big_r = 1.0 / kappa_bulge(t, self.v0, self.h)
            y = self.v0 * t - x * x / (big_r + np.sqrt((big_r - x) * (big_r + x)))
        else:
            y = np.sqrt(np.maximum((a - x) * (a + x), 0.0)) + self.v0 * t
            if stage.kind == "capped":
                y = np.minimum(y, self.h)
        return np.column_stack([x, y])

    def curve(self, stage_index: int, t: float, n: int = 65) -> np.ndarray:
        """Global curve points of stage ``stage_index`` at its local time ``t``."""
        st = self.stages[stage_index]
        pts = self.local_curve(st, t, n)
        up = np.array(st.e_up, dtype=float)
        side = np.array([up[1], -up[0]])
        return np.asarray(st.origin) + pts[:, :1] * side + pts[:, 1:] * up


def _stage_margins(kind: str, t: np.ndarray, x: np.ndarray, h: float, v0: float, eps: float,
                   m0: float, slack: float) -> np.ndarray:
    """Inclusion margins ``kappa + F - sup F(v_n)`` in stable closed form.

    ``m0 = F - tau - 2/h - eps*v0`` and ``slack = F - tau`` (stationary parts).
    """
    a = 0.5 * h
    T, X = np.meshgrid(t, x, indexing="ij")
    if kind == "init":
        vt = v0 * T
        # 2/h - kappa(t) and v0 - v_n, both written as manifest non-negatives
        dk = (vt - a) ** 2 / (a * (vt * vt + a * a))
        big_r = (vt * vt + a * a) / (2.0 * vt)
        dv = X * X / ((big_r + np.sqrt((big_r - X) * (big_r + X))) * T)
        return m0 + dk + eps * dv
    root = np.sqrt(np.maximum((a - X) * (a + X), 0.0))
    arc = m0 + eps * v0 * X * X / (a * (a + root))
    walls = np.full(T.shape[0], slack)
    if kind == "capped":
        # the flat top at the far face is stationary
        y = root + v0 * T
        arc = np.where(y >= h, slack, arc)
    return np.concatenate([arc.ravel(), walls])


def construct_path_evolution(path: PathCert, F: float, v0: Optional[float] = None,
                             kinetics: KineticRelation = KineticRelation(), n_t: int = 33,
                             n_x: int = 65) -> PathEvolution:
    """Piecewise propagating subsolution along ``path`` and its sampled margins.

    Each direction change runs a capped translation followed by a bulge on
    the face towards the next cube; straight moves translate a semicircle.
    """
    tau, eps, h = kinetics.tau, kinetics.epsilon, path.h
    if not F > tau + 2.0 / h:
        raise ValueError(f"need F > tau + 2/h = {tau + 2.0 / h}, got {F}")
    if v0 is None:
        v0 = (F - tau - 2.0 / h) / eps
    if not v0 > 0 or eps * v0 + tau > F - 2.0 / h:
        raise ValueError(f"v0={v0} violates eps*v0 + tau <= F - 2/h")
    a = 0.5 * h
    m0 = ((F - tau) - 2.0 / h) - eps * v0
    slack = F - tau
    stages: list[EvolutionStage] = []
    t = 0.0
    k0, l0 = path.cubes[0]
    up = (0, 1)
    origin = (k0 * h + a, l0 * h)
    stages.append(EvolutionStage("init", (k0, l0), origin, up, t, t + a / v0))
    t += a / v0
    for (k, l), step in zip(path.cubes[:-1], path_steps(path.cubes)):
        if step == up:
            origin = (origin[0] + h * up[0], origin[1] + h * up[1])
            stages.append(EvolutionStage("pass", (k, l), origin, up, t, t + h / v0))
            t += h / v0
            continue
        stages.append(EvolutionStage("capped", (k, l), origin, up, t, t + h / v0))
        t += h / v0
        centre = (k * h + a, l * h + a)
        up = step
        origin = (centre[0] + a * up[0], centre[1] + a * up[1])
        nxt = ((k + step[0]) % path.n_cols if path.periodic else k + step[0], l + step[1])
        stages.append(EvolutionStage("init", nxt, origin, up, t, t + a / v0))
        t += a / v0
    xs = np.linspace(-a, a, n_x)
    by_kind: dict = {}
    n = 0
    for kind in {s.kind for s in stages}:
        dur = a / v0 if kind == "init" else h / v0
        ts = np.linspace(dur / n_t, dur, n_t)
        m = _stage_margins(kind, ts, xs, h, v0, eps, m0, slack)
        by_kind[kind] = float(m.min())
        n += m.size * sum(1 for s in stages if s.kind == kind)
    min_m = min(by_kind.values())
    return PathEvolution(stages, h, v0, F, tau, eps, min_m, by_kind, n, kappa_bulge(a / v0, v0, h))


# --------------------------------------------------------------------------
# Closed-form bounds


def lower_constant(r0: float, f: float) -> float:
    """``c(r0, f)`` of the lower bound ``tau + min(c sqrt(rho), f/2)``."""
    fr = 0.5 * f * min(r0, 2.0 / f) if f > 0 else 0.0
    return math.sqrt(2.0) * fr ** 1.5 / (4.0 * math.sqrt(math.log(16.0)))


def analytic_bounds(params: ObstacleParams, tau: float = 0.0, p_c: float = P_C_UPPER) -> tuple[float, float]:
    """``(F_lb, F_ub)`` from the closed-form constants.

    ``p_c`` only enters the upper bound and defaults to a documented placeholder.
    """
    if not 0 < p_c < 1:
        raise ValueError("p_c must lie in (0, 1)")
    s = math.sqrt(params.rho)
    lb = tau + min(lower_constant(params.r0, params.f) * s, 0.5 * params.f)
    ub = tau + 4.0 * s / math.sqrt(-0.2 * math.log(p_c))
    return lb, ub


def write_certificates(path, records: Iterable[dict], header: Optional[dict] = None) -> None:
    """JSON-lines dump: optional header record then one record per certificate."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"type": "header", **header}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
