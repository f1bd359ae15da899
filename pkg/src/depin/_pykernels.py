"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures and the same order of floating-point operations, vectorised
over nodes instead of looping.
"""
from __future__ import annotations

import numpy as np

ST_RUNNING = 0
ST_PINNED = 1
ST_BALLISTIC = 2
ST_NEED_BAND = 3
ST_SLOPE = 4
ST_NAN = 5


def _profile(d: np.ndarray, tab) -> np.ndarray:
    knots, coef = tab.knots, tab.coef
    m = len(knots) - 1
    hk = (tab.r1 - tab.r0) / m
    out = np.zeros_like(d)
    out[d <= tab.r0] = 1.0
    mid = (d > tab.r0) & (d < tab.r1)
    if mid.any():
        dm = d[mid]
        k = np.minimum(((dm - tab.r0) / hk).astype(np.int64), m - 1)
        s = dm - knots[k]
        c = coef[k]
        out[mid] = ((c[:, 0] * s + c[:, 1]) * s + c[:, 2]) * s + c[:, 3]
    return out


def phi_points(xw: np.ndarray, y: np.ndarray, tab) -> np.ndarray:
    """Friction at points with pre-wrapped x coordinates."""
    xw = np.asarray(xw, dtype=float)
    y = np.asarray(y, dtype=float)
    n = xw.shape[0]
    if tab.f == 0.0 or n == 0:
        return np.zeros(n)
    ncx = tab.ncx
    col = np.minimum((xw / tab.cell_w).astype(np.int64), ncx - 1)
    row = np.floor(y / tab.cell_h).astype(np.int64) - tab.row0
    if ncx >= 3:
        col_sets = [np.where(col > 0, col - 1, ncx - 1), col, np.where(col < ncx - 1, col + 1, 0)]
    else:
        col_sets = [np.zeros_like(col) + c for c in range(ncx)]
    acc = np.zeros(n)
    start = tab.cell_start
    r1sq = tab.r1 * tab.r1
    half_w = 0.5 * tab.width
    for dr in (-1, 0, 1):
        r = row + dr
        row_ok = (r >= 0) & (r < tab.nrows)
        for cols in col_sets:
            jc = np.where(row_ok, r * ncx + cols, 0)
            c0 = np.where(row_ok, start[jc], 0)
            c1 = np.where(row_ok, start[jc + 1], 0)
            cnt = c1 - c0
            kmax = int(cnt.max()) if n else 0
            for k in range(kmax):
                sel = np.nonzero(cnt > k)[0]
                j = c0[sel] + k
                ddx = np.abs(xw[sel] - tab.cx[j])
                ddx = np.where(ddx > half_w, tab.width - ddx, ddx)
                ddy = y[sel] - tab.cy[j]
                d2 = ddx * ddx + ddy * ddy
                near = d2 < r1sq
                if near.any():
                    idx = sel[near]
                    acc[idx] = acc[idx] + _profile(np.sqrt(d2[near]), tab)
    return np.where(acc >= 1.0, tab.f, tab.f * acc)


def advance(u, v, phi, xw, dx, dt, force, tau, eps, n_steps, tab, y_lo, y_hi, h_ball,
            slope_max, tol_v, still_needed, still_count, moved):
    """Advance the front ``u`` in place by up to ``n_steps`` explicit steps.

    Returns ``(steps_done, status, still_count)``; see the compiled version.
    """
    n = u.shape[0]
    inv_dx = 1.0 / dx
    half = 0.5 * inv_dx
    step = 0
    status = ST_RUNNING
    umin, umax = u.min(), u.max()
    while step < n_steps:
        if umax > y_hi or umin < y_lo:
            status = ST_NEED_BAND
            break
        up = np.roll(u, -1)
        um = np.roll(u, 1)
        s = (up - u) * inv_dx
        if np.any(np.abs(s) > slope_max):
            status = ST_SLOPE
            break
        nh = s / np.sqrt(1.0 + s * s)
        stale = np.nonzero(moved)[0]
        if stale.size:
            phi[stale] = phi_points(xw[stale], u[stale], tab)
            moved[stale] = 0
        kap = (nh - np.roll(nh, 1)) * inv_dx
        b = kap + force
        lam = tau + phi
        ab = np.abs(b) - lam
        vel = np.where(ab > 0.0, ab / eps, 0.0)
        vel = np.where(vel * eps > ab, np.nextafter(vel, 0.0), vel)
        vel = np.where(b < 0.0, -vel, vel)
        v[:] = vel
        ux = (up - um) * half
        w = u + dt * vel * np.sqrt(1.0 + ux * ux)
        if not np.all(np.abs(w) <= 1e300):
            status = ST_NAN
            break
        vmax = float(np.abs(vel).max())
        umin, umax = w.min(), w.max()
        changed = w != u
        moved[changed] = 1
        u[changed] = w[changed]
        step += 1
        still_count = still_count + 1 if vmax <= tol_v else 0
        if still_count >= still_needed:
            status = ST_PINNED
            break
        if umin >= h_ball:
            status = ST_BALLISTIC
            break
    return step, status, still_count
