from __future__ import annotations

import json
import math

import numpy as np
import pytest

from depin.depinning import (
    BisectionConfig,
    BracketError,
    CellResult,
    certificate_sandwich,
    estimate_critical,
    fit_power_law,
    scaling_sweep,
    summarize,
)
from depin.front_dynamics import FrontState, KineticRelation, SimConfig, Tag, default_dt, run
from depin.obstacle_field import ObstacleField, ObstacleParams

from conftest import empty_field


def free_setup(tau=0.4):
    fld = empty_field(width=2.0)
    dx = 0.025
    cfg = SimConfig(dt=default_dt(dx, 1.0), t_max=40.0, h_ballistic=0.05)
    return fld, KineticRelation(tau=tau), cfg, dx


def test_free_threshold_equals_tau():
    fld, kin, cfg, dx = free_setup()
    est = estimate_critical(fld, kin, cfg, BisectionConfig(tol_F=5e-3), dx=dx)
    assert abs(est.F_crit - 0.4) <= max(5e-3, 2 * cfg.dt)
    assert est.check_invariant()
    assert est.F_ball - est.F_pin <= 5e-3


def test_bracket_failure_without_ballistic():
    fld, kin, cfg, dx = free_setup()
    with pytest.raises(BracketError):
        estimate_critical(fld, kin, cfg, BisectionConfig(F_hi=0.3, doubling_cap=0), dx=dx)


def test_all_undecided_raises():
    fld = empty_field(width=2.0)
    dx = 0.05
    cfg = SimConfig(dt=default_dt(dx, 1.0), t_max=0.4, h_ballistic=1.0)
    with pytest.raises(BracketError, match="undecided"):
        estimate_critical(fld, KineticRelation(), cfg, BisectionConfig(F_hi=4.0, tol_F=2.5), dx=dx)


def small_field(seed, rho=4.0):
    return ObstacleField(ObstacleParams(rho=rho, r0=0.1, r1=0.2, f=2.0, seed=seed), width=3.0)


def small_cfg(rho=4.0, tol_v=0.0):
    dx = 0.025
    return SimConfig(dt=default_dt(dx, 1.0), t_max=15 / rho, h_ballistic=3 / math.sqrt(rho), tol_v=tol_v), dx


def test_tau_shifts_threshold_additively():
    fld = small_field(1)
    cfg, dx = small_cfg()
    bis = BisectionConfig(tol_F=0.02)
    a = estimate_critical(fld, KineticRelation(tau=0.0), cfg, bis, dx=dx)
    b = estimate_critical(fld, KineticRelation(tau=0.3), cfg, bis, dx=dx)
    assert abs((b.F_crit - a.F_crit) - 0.3) <= 0.02


@pytest.mark.slow
def test_bracket_edges_reexecute():
    tol = 0.02
    cfg, dx = small_cfg()
    kin = KineticRelation()
    for seed in range(20):
        fld = small_field(seed)
        est = estimate_critical(fld, kin, cfg, BisectionConfig(tol_F=tol), dx=dx)
        assert est.check_invariant()
        below = run(fld, kin, est.F_crit - 2 * tol, cfg, dx=dx)
        above = run(fld, kin, est.F_crit + 2 * tol, cfg, dx=dx)
        # undecided counts as not ballistic
        assert below.tag is not Tag.BALLISTIC, seed
        assert above.tag is Tag.BALLISTIC, seed


def test_warm_start_option_runs():
    fld = small_field(2)
    cfg, dx = small_cfg(tol_v=1e-4)
    est = estimate_critical(fld, KineticRelation(), cfg, BisectionConfig(tol_F=0.05, warm_start=True), dx=dx)
    assert est.check_invariant()


# --------------------------------------------------------------------------
# sweeps and fits


def synthetic(rho, i, s):
    return CellResult(rho, i, s, 1000 * i + s, F_crit=0.1 + 0.7 * math.sqrt(rho))


def test_synthetic_slope():
    study = scaling_sweep([0.5, 1, 2, 4, 8], 8, synthetic, tau=0.1, n_boot=50)
    assert abs(study.fit.slope - 0.5) <= 1e-12
    assert abs(math.exp(study.fit.intercept) - 0.7) <= 1e-12
    assert study.fit.ci[0] <= 0.5 + 1e-12 and study.fit.ci[1] >= 0.5 - 1e-12


def test_single_density_no_fit():
    study = scaling_sweep([2.0], 3, synthetic, tau=0.1)
    assert study.fit is None and "densities" in study.fit_reason
    assert len(study.rows[0].cells) == 3


def test_fit_scale_equivariance():
    rng = np.random.default_rng(4)
    rhos = [0.5, 1, 2, 4, 8]
    gaps = rng.uniform(0.2, 2.0, 5)
    s0, c0 = fit_power_law(rhos, gaps)
    for k in (-3, 1, 5):
        s, c = fit_power_law(rhos, gaps * 2.0 ** k)
        assert s == s0
        assert c == pytest.approx(c0 + k * math.log(2), abs=1e-12)
    s, _ = fit_power_law(rhos, gaps * 3.7)
    assert abs(s - s0) <= 1e-12


def test_fit_guards():
    with pytest.raises(ValueError):
        fit_power_law([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_power_law([1.0, 2.0], [1.0, -1.0])


def test_failed_density_excluded():
    cells = []
    for i, rho in enumerate([0.5, 1, 2, 4, 8]):
        for s in range(8):
            c = synthetic(rho, i, s)
            if rho == 2 and s < 5:
                c = CellResult(rho, i, s, 0, error="bracket failed")
            cells.append(c)
    study = summarize(cells, 0.1, n_boot=20)
    ex = [r for r in study.rows if r.excluded]
    assert [r.rho for r in ex] == [2]
    assert study.fit is not None and abs(study.fit.slope - 0.5) <= 1e-12


def test_sweep_order_independent():
    import random

    def shuffled_map(fn, items):
        items = list(items)
        order = list(range(len(items)))
        random.Random(3).shuffle(order)
        out = [None] * len(items)
        for j in order:
            out[j] = fn(items[j])
        return [out[j] for j in order]

    a = scaling_sweep([1, 2, 4, 8], 8, synthetic, n_boot=30)
    b = scaling_sweep([1, 2, 4, 8], 8, synthetic, n_boot=30, mapper=shuffled_map)
    assert a.fit == b.fit
    assert [r.mean_gap for r in a.rows] == [r.mean_gap for r in b.rows]


# --------------------------------------------------------------------------
# sandwich


def test_sandwich_obstacle_free():
    fld, kin, cfg, dx = free_setup()
    rep = certificate_sandwich(fld, kin, cfg, BisectionConfig(tol_F=5e-3), dx=dx)
    assert rep.lower_trivial and rep.F_lb is None and "lower" in rep.one_sided
    assert abs(rep.F_hat - 0.4) <= 5e-3
    assert rep.F_ub == pytest.approx(0.4 + 2.0 / fld.width, rel=1e-12)
    assert rep.holds


def test_sandwich_report_when_bracket_fails():
    fld = empty_field(width=2.0)
    cfg = SimConfig(dt=default_dt(0.05, 1.0), t_max=0.4, h_ballistic=1.0)
    rep = certificate_sandwich(fld, KineticRelation(), cfg, BisectionConfig(F_hi=4.0, tol_F=2.5), dx=0.05)
    assert rep.error and rep.holds is None and rep.F_hat is None
    json.dumps(rep.to_record())
