"""Critical-force estimation by outcome bisection and density sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .front_dynamics import (
    FrontState,
    KineticRelation,
    Outcome,
    SimConfig,
    Tag,
    default_dx,
    run,
)
from .obstacle_field import ObstacleField

logger = logging.getLogger(__name__)


class BracketError(RuntimeError):
    """No ballistic outcome below the doubling cap, or no decided probe at all."""


@dataclass(frozen=True)
class BisectionConfig:
    """Bracketing and bisection controls.

    ``F_lo``/``F_hi`` default to ``tau`` and ``tau + f + 2/h_ballistic``.
    With ``warm_start`` each probe starts from the final state of the highest
    pinned probe instead of the flat line; by comparison the outcome is the
    same, the run is just shorter.
    """

    F_lo: Optional[float] = None
    F_hi: Optional[float] = None
    tol_F: float = 5e-3
    max_iter: int = 60
    doubling_cap: int = 8
    warm_start: bool = False

    def __post_init__(self) -> None:
        if not self.tol_F > 0:
            raise ValueError("tol_F must be > 0")
        if self.F_lo is not None and self.F_hi is not None and not self.F_lo < self.F_hi:
            raise ValueError(f"need F_lo < F_hi, got {self.F_lo} >= {self.F_hi}")


@dataclass
class Probe:
    force: float
    tag: str
    t_decided: float
    steps: int
    warm: bool = False


@dataclass
class CriticalEstimate:
    F_crit: float
    F_pin: float
    F_ball: float
    probes: list[Probe] = field(default_factory=list)
    undecided_count: int = 0
    seed: Optional[int] = None
    flags: list[str] = field(default_factory=list)

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.F_pin, self.F_ball)

    def check_invariant(self) -> bool:
        """Lower edge never ballistic, upper edge ballistic, per the stored probes."""
        tags = {p.force: p.tag for p in self.probes}
        lo_ok = self.F_pin in tags and tags[self.F_pin] != Tag.BALLISTIC.value
        hi_ok = self.F_ball in tags and tags[self.F_ball] == Tag.BALLISTIC.value
        return lo_ok and hi_ok and self.F_pin < self.F_ball


def estimate_critical(field: ObstacleField, kinetics: KineticRelation, simcfg: SimConfig,
                      biscfg: BisectionConfig = BisectionConfig(),
                      dx: Optional[float] = None,
                      runner: Callable[..., Outcome] = run) -> CriticalEstimate:
    """Bracket and bisect the force separating pinned from ballistic runs.

    Undecided runs count as not ballistic.  Every probe uses the same field
    realisation.
    """
    tau = kinetics.tau
    dx = dx if dx is not None else default_dx(field.params.rho, field.params.r0)
    flat = FrontState.flat(field.width, dx)
    lo = tau if biscfg.F_lo is None else biscfg.F_lo
    hi = biscfg.F_hi
    if hi is None:
        hi = tau + field.params.f + 2.0 / simcfg.h_ballistic
    probes: list[Probe] = []
    warm_state: Optional[FrontState] = None
    undecided = 0

    def probe(force: float) -> Outcome:
        nonlocal warm_state, undecided
        start = flat
        warm = False
        if biscfg.warm_start and warm_state is not None and force > warm_pin:
            start = warm_state
            warm = True
        out = runner(field, kinetics, force, simcfg, state0=start.copy())
        probes.append(Probe(force, out.tag.value, out.t_decided, out.steps, warm))
        if out.tag is Tag.UNDECIDED:
            undecided += 1
        return out

    warm_pin = -math.inf
    out_lo = probe(lo)
    if out_lo.tag is Tag.BALLISTIC:
        if lo <= tau:
            raise BracketError(f"ballistic already at F_lo={lo}")
        hi, lo = lo, tau
        out_lo = probe(lo)
    if out_lo.tag is Tag.PINNED:
        warm_state, warm_pin = out_lo.final_state, lo

    out_hi = probe(hi)
    n_doubling = 0
    while not out_hi.is_ballistic:
        if out_hi.tag is Tag.PINNED and hi > warm_pin:
            warm_state, warm_pin = out_hi.final_state, hi
        if n_doubling >= biscfg.doubling_cap:
            raise BracketError(f"no ballistic outcome up to F={hi} after {n_doubling} doublings")
        lo = hi
        hi = tau + 2.0 * (hi - tau)
        n_doubling += 1
        out_hi = probe(hi)

    n_iter = 0
    n_mid = 0
    n_mid_undecided = 0
    while hi - lo > biscfg.tol_F and n_iter < biscfg.max_iter:
        mid = 0.5 * (lo + hi)
        out = probe(mid)
        n_mid += 1
        if out.is_ballistic:
            hi = mid
        else:
            lo = mid
            if out.tag is Tag.PINNED:
                warm_state, warm_pin = out.final_state, mid
            else:
                n_mid_undecided += 1
        n_iter += 1
    est = CriticalEstimate(0.5 * (lo + hi), lo, hi, probes, undecided, field.params.seed)
    if n_mid and n_mid_undecided == n_mid:
        raise BracketError("every bisection probe was undecided; raise t_max")
    if hi - lo > biscfg.tol_F:
        est.flags.append("max_iter")
    tags = {p.force: p.tag for p in probes}
    if tags.get(lo) == Tag.UNDECIDED.value:
        est.flags.append("lower_edge_undecided")
    if undecided:
        logger.info("seed %s: %d undecided probes", field.params.seed, undecided)
    return est


# --------------------------------------------------------------------------
# Density sweeps


@dataclass
class CellResult:
    """Outcome of one (density, seed) cell; ``error`` is set when estimation failed."""

    rho: float
    rho_index: int
    seed_index: int
    seed: int
    F_crit: Optional[float] = None
    bracket_lo: Optional[float] = None
    bracket_hi: Optional[float] = None
    undecided_count: int = 0
    flags: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.F_crit is not None

    @classmethod
    def from_estimate(cls, rho: float, i_rho: int, i_seed: int, seed: int,
                      est: CriticalEstimate) -> "CellResult":
        return cls(rho, i_rho, i_seed, seed, est.F_crit, est.F_pin, est.F_ball,
                   est.undecided_count, list(est.flags))


@dataclass
class DensityRow:
    rho: float
    cells: list
    mean_gap: Optional[float] = None
    stderr: Optional[float] = None
    n_ok: int = 0
    excluded: bool = False
    reason: str = ""


@dataclass
class PowerFit:
    slope: float
    intercept: float
    ci: tuple
    n_boot: int


@dataclass
class ScalingStudy:
    tau: float
    rows: list
    fit: Optional[PowerFit] = None
    fit_reason: str = ""

    @property
    def included(self) -> list:
        return [r for r in self.rows if not r.excluded]


MIN_DENSITIES = 4
MIN_SEEDS = 8


def fit_power_law(rhos: Sequence[float], gaps: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``log gap = intercept + slope * log rho``.

    Gaps are divided by the first one before the logarithm, so rescaling all
    gaps by a power of two leaves the slope bit-identical.
    """
    x = np.log(np.asarray(rhos, dtype=float))
    g = np.asarray(gaps, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two densities")
    if np.any(g <= 0):
        raise ValueError("gaps must be positive to take logarithms")
    y = np.log(g / g[0])
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(np.log(g[0]) + y.mean() - slope * x.mean())
    return slope, intercept


def bootstrap_slope(rows: Sequence[DensityRow], tau: float, n_boot: int = 1000,
                    seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile interval of the slope, resampling seeds within each density."""
    rng = np.random.default_rng(seed)
    rhos = [r.rho for r in rows]
    samples = [np.array([c.F_crit - tau for c in r.cells if c.ok]) for r in rows]
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        means = [s[rng.integers(0, s.size, s.size)].mean() for s in samples]
        slopes[b] = fit_power_law(rhos, means)[0]
    q = 0.5 * (1.0 - level)
    lo, hi = np.quantile(slopes, [q, 1.0 - q])
    return float(lo), float(hi)


def summarize(cells: Sequence[CellResult], tau: float, n_boot: int = 1000,
              boot_seed: int = 0) -> ScalingStudy:
    """Group cells by density, exclude densities with > 50% failures, fit if allowed."""
    by_rho: dict = {}
    for c in sorted(cells, key=lambda c: (c.rho_index, c.seed_index)):
        by_rho.setdefault((c.rho_index, c.rho), []).append(c)
    rows = []
    for (_, rho), cs in sorted(by_rho.items()):
        ok = [c for c in cs if c.ok]
        row = DensityRow(rho, cs, n_ok=len(ok))
        if len(ok) * 2 < len(cs) or not ok:
            row.excluded = True
            row.reason = f"{len(cs) - len(ok)} of {len(cs)} estimates failed"
        else:
            gaps = np.array([c.F_crit - tau for c in ok])
            row.mean_gap = float(gaps.mean())
            row.stderr = float(gaps.std(ddof=1) / math.sqrt(gaps.size)) if gaps.size > 1 else None
            if row.mean_gap <= 0:
                row.excluded = True
                row.reason = "non-positive mean gap"
        rows.append(row)
    study = ScalingStudy(tau, rows)
    inc = study.included
    if len(inc) < MIN_DENSITIES:
        study.fit_reason = f"{len(inc)} usable densities, need {MIN_DENSITIES}"
    elif min(r.n_ok for r in inc) < MIN_SEEDS:
        study.fit_reason = f"fewer than {MIN_SEEDS} successful seeds at some density"
    else:
        slope, icpt = fit_power_law([r.rho for r in inc], [r.mean_gap for r in inc])
        ci = bootstrap_slope(inc, tau, n_boot, boot_seed)
        study.fit = PowerFit(slope, icpt, ci, n_boot)
    for r in rows:
        if r.excluded:
            logger.warning("density %g excluded: %s", r.rho, r.reason)
    return study


def scaling_sweep(densities: Sequence[float], n_seeds: int,
                  estimate: Callable[[float, int, int], CellResult], tau: float = 0.0,
                  mapper: Callable = map, r1: Optional[float] = None, n_boot: int = 1000,
                  boot_seed: int = 0) -> ScalingStudy:
    """Run ``estimate(rho, rho_index, seed_index)`` over the grid and fit the exponent.

    ``mapper`` lets callers plug in a process pool; results are merged by
    cell key, so scheduling order never matters.
    """
    if n_seeds < 1 or not densities:
        raise ValueError("need at least one density and one seed")
    if r1 is not None:
        for rho in densities:
            if r1 * math.sqrt(rho) > 0.5:
                logger.warning("r1=%g is not small against the spacing %g at rho=%g",
                               r1, 1 / math.sqrt(rho), rho)
    keys = [(float(rho), i, s) for i, rho in enumerate(densities) for s in range(n_seeds)]
    cells = list(mapper(_call_cell, [(estimate, k) for k in keys]))
    return summarize(cells, tau, n_boot, boot_seed)


def _call_cell(job) -> CellResult:
    estimate, (rho, i, s) = job
    return estimate(rho, i, s)


# --------------------------------------------------------------------------
# Certificate sandwich


@dataclass
class SandwichReport:
    seed: Optional[int]
    F_lb: Optional[float]
    F_hat: Optional[float]
    F_ub: Optional[float]
    tau: float
    lower_trivial: bool
    holds: Optional[bool]
    one_sided: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: Optional[str] = None

    def to_record(self) -> dict:
        return asdict(self)


def certificate_sandwich(field: ObstacleField, kinetics: KineticRelation, simcfg: SimConfig,
                         biscfg: BisectionConfig = BisectionConfig(), lower_tol: float = 1e-4,
                         estimate: Optional[CriticalEstimate] = None,
                         dx: Optional[float] = None) -> SandwichReport:
    """Compare the certified bounds with the simulated threshold on one field.

    Without a barrier the flat line still certifies ``F = tau``; that trivial
    bound is used for the comparison and marked ``lower_trivial``.
    """
    from . import certificates as cert

    tau = kinetics.tau
    one_sided = []
    diag: dict = {"width": field.width, "h_ballistic": simcfg.h_ballistic}
    lower = cert.best_lower_certificate(field, kinetics, tol=lower_tol)
    if lower is None:
        one_sided.append("lower")
        F_lb, trivial = tau, True
    else:
        F_lb, trivial = lower.F_certified, False
        diag["barrier_columns"] = int(lower.barrier.geometry.n_cols)
    upper = cert.best_upper_certificate(field, tau, height=simcfg.h_ballistic)
    if upper is None:
        one_sided.append("upper")
        F_ub = None
    else:
        F_ub = upper.F_ub
        diag.update(path_h=upper.h, path_len=len(upper.cubes))
    error = None
    F_hat = None
    if estimate is None:
        try:
            estimate = estimate_critical(field, kinetics, simcfg, biscfg, dx=dx)
        except BracketError as exc:
            error = str(exc)
    if estimate is not None:
        F_hat = estimate.F_crit
        diag["undecided"] = estimate.undecided_count
    holds = None
    if F_hat is not None:
        holds = F_lb <= F_hat and (F_ub is None or F_hat <= F_ub)
        if not holds:
            logger.warning("sandwich fails for seed %s: F_lb=%s F_hat=%s F_ub=%s; %s",
                           field.params.seed, F_lb, F_hat, F_ub, diag)
    return SandwichReport(field.params.seed, None if trivial else F_lb, F_hat, F_ub, tau, trivial,
                          holds, one_sided, diag, error)
