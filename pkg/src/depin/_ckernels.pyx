# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: friction lookup and the explicit prox time stepper.

Mirrors :mod:`depin._pykernels` operation for operation so both backends
produce the same floating-point results up to libm differences.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, fabs, nextafter

cnp.import_array()

DEF ST_RUNNING = 0
DEF ST_PINNED = 1
DEF ST_BALLISTIC = 2
DEF ST_NEED_BAND = 3
DEF ST_SLOPE = 4
DEF ST_NAN = 5
DEF CAND_MAX = 16


cdef struct Tab:
    const double* cx
    const double* cy
    const long long* start
    long ncx
    double cell_w
    double cell_h
    long row0
    long nrows
    double width
    double f
    double r0
    double r1
    double r1sq
    const double* knots
    const double* coef
    long m
    double hk


cdef inline double _profile(double d, Tab* t) nogil:
    cdef long k
    cdef double s
    cdef const double* c
    if d <= t.r0:
        return 1.0
    if d >= t.r1:
        return 0.0
    k = <long>((d - t.r0) / t.hk)
    if k > t.m - 1:
        k = t.m - 1
    s = d - t.knots[k]
    c = t.coef + 4 * k
    return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]


cdef inline double _phi_collect(double x, double y, Tab* t, long long* cand, long kmax,
                                long* count, double* delta) nogil:
    # Full 3x3 scan like _phi that also records, in scan order, every centre
    # within r1 + delta of (x, y).  Nodes keep their x, so only these centres
    # can matter while the node stays within delta of y; the summation order
    # matches the full scan, hence cached and scanned values agree bitwise.  count = -1 when
    # more than kmax centres qualify.
    cdef long col, row, r, cc, j, jc, c0, c1, ncols, nc = 0
    cdef long cols[3]
    cdef double acc = 0.0, ddx, ddy, d2, gap, reach2
    col = <long>(x / t.cell_w)
    if col > t.ncx - 1:
        col = t.ncx - 1
    row = <long>floor(y / t.cell_h) - t.row0
    if t.ncx >= 3:
        ncols = 3
        cols[0] = col - 1 if col > 0 else t.ncx - 1
        cols[1] = col
        cols[2] = col + 1 if col < t.ncx - 1 else 0
    else:
        ncols = t.ncx
        cols[0] = 0
        cols[1] = 1
    gap = y - (row - 1 + t.row0) * t.cell_h
    if (row + 2 + t.row0) * t.cell_h - y < gap:
        gap = (row + 2 + t.row0) * t.cell_h - y
    # a short validity window keeps the candidate lists short
    if gap > 1.25 * t.r1:
        gap = 1.25 * t.r1
    delta[0] = (gap - t.r1) * (1.0 - 1e-9)
    if delta[0] < 0.0:
        delta[0] = 0.0
    reach2 = gap * gap * (1.0 + 1e-9)
    for r in range(row - 1, row + 2):
        if r < 0 or r >= t.nrows:
            continue
        for cc in range(ncols):
            jc = r * t.ncx + cols[cc]
            c0 = t.start[jc]
            c1 = t.start[jc + 1]
            for j in range(c0, c1):
                ddx = fabs(x - t.cx[j])
                if ddx > 0.5 * t.width:
                    ddx = t.width - ddx
                ddy = y - t.cy[j]
                d2 = ddx * ddx + ddy * ddy
                if d2 < reach2:
                    if nc >= 0:
                        if nc < kmax:
                            cand[nc] = j
                            nc += 1
                        else:
                            nc = -1
                if d2 < t.r1sq:
                    acc += _profile(sqrt(d2), t)
    count[0] = nc
    if t.f == 0.0:
        return 0.0
    if acc >= 1.0:
        return t.f
    return t.f * acc


cdef inline double _phi_cached(double x, double y, Tab* t, const long long* cand, long nc) nogil:
    cdef long m
    cdef long long j
    cdef double acc = 0.0, ddx, ddy, d2
    for m in range(nc):
        j = cand[m]
        ddx = fabs(x - t.cx[j])
        if ddx > 0.5 * t.width:
            ddx = t.width - ddx
        ddy = y - t.cy[j]
        d2 = ddx * ddx + ddy * ddy
        if d2 < t.r1sq:
            acc += _profile(sqrt(d2), t)
    if t.f == 0.0:
        return 0.0
    if acc >= 1.0:
        return t.f
    return t.f * acc


cdef Tab _make_tab(tab, double[::1] cx, double[::1] cy, long long[::1] start,
                   double[::1] knots, double[:, ::1] coef):
    cdef Tab t
    t.cx = &cx[0] if cx.shape[0] > 0 else NULL
    t.cy = &cy[0] if cy.shape[0] > 0 else NULL
    t.start = &start[0]
    t.ncx = tab.ncx
    t.cell_w = tab.cell_w
    t.cell_h = tab.cell_h
    t.row0 = tab.row0
    t.nrows = tab.nrows
    t.width = tab.width
    t.f = tab.f
    t.r0 = tab.r0
    t.r1 = tab.r1
    t.r1sq = tab.r1 * tab.r1
    t.knots = &knots[0]
    t.coef = &coef[0, 0]
    t.m = knots.shape[0] - 1
    t.hk = (tab.r1 - tab.r0) / t.m
    return t


def phi_points(double[::1] xw, double[::1] y, tab):
    """Friction at points with pre-wrapped x coordinates."""
    cdef double[::1] cx = np.ascontiguousarray(tab.cx, dtype=np.float64)
    cdef double[::1] cy = np.ascontiguousarray(tab.cy, dtype=np.float64)
    cdef long long[::1] start = np.ascontiguousarray(tab.cell_start, dtype=np.int64)
    cdef double[::1] knots = np.ascontiguousarray(tab.knots, dtype=np.float64)
    cdef double[:, ::1] coef = np.ascontiguousarray(tab.coef, dtype=np.float64)
    cdef Tab t = _make_tab(tab, cx, cy, start, knots, coef)
    cdef Py_ssize_t i, n = xw.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef long nc
    cdef double dlt
    with nogil:
        for i in range(n):
            o[i] = _phi_collect(xw[i], y[i], &t, NULL, 0, &nc, &dlt)
    return out


def advance(double[::1] u, double[::1] v, double[::1] phi, double[::1] xw,
            double dx, double dt, double force, double tau, double eps,
            long n_steps, tab, double y_lo, double y_hi, double h_ball,
            double slope_max, double tol_v, long still_needed, long still_count,
            unsigned char[::1] moved):
    """Advance the front ``u`` in place by up to ``n_steps`` explicit steps.

    Returns ``(steps_done, status, still_count)``.  ``v`` receives the nodal
    normal velocities of the last completed step; ``phi`` caches the friction
    at each node and ``moved`` flags the entries of the cache that are stale.
    """
    cdef double[::1] cx = np.ascontiguousarray(tab.cx, dtype=np.float64)
    cdef double[::1] cy = np.ascontiguousarray(tab.cy, dtype=np.float64)
    cdef long long[::1] start = np.ascontiguousarray(tab.cell_start, dtype=np.int64)
    cdef double[::1] knots = np.ascontiguousarray(tab.knots, dtype=np.float64)
    cdef double[:, ::1] coef = np.ascontiguousarray(tab.coef, dtype=np.float64)
    cdef Tab t = _make_tab(tab, cx, cy, start, knots, coef)
    cdef Py_ssize_t n = u.shape[0], i, ip, im
    cdef double[::1] nh = np.empty(n, dtype=np.float64)
    cdef double[::1] un = np.empty(n, dtype=np.float64)
    cdef long step = 0
    cdef int status = ST_RUNNING
    cdef double inv_dx = 1.0 / dx, s, kap, b, lam, vel, ux, ab, vmax, umin, umax, w
    cdef bint bad
    # per-node candidate lists, valid while |u - cref| <= crad
    cdef long kmax = CAND_MAX
    cdef double[::1] cref = np.empty(n, dtype=np.float64)
    cdef double[::1] crad = np.empty(n, dtype=np.float64)
    cdef long[::1] ccnt = np.full(n, -1, dtype=np.int_)
    cdef long long[::1] cidx = np.empty(n * CAND_MAX, dtype=np.int64)
    cdef long nc
    cdef double dlt
    with nogil:
        umin = u[0]
        umax = u[0]
        for i in range(n):
            if u[i] < umin:
                umin = u[i]
            if u[i] > umax:
                umax = u[i]
        while step < n_steps:
            if umax > y_hi or umin < y_lo:
                status = ST_NEED_BAND
                break
            for i in range(n):
                ip = i + 1 if i + 1 < n else 0
                s = (u[ip] - u[i]) * inv_dx
                if fabs(s) > slope_max:
                    status = ST_SLOPE
                    break
                nh[i] = s / sqrt(1.0 + s * s)
            if status != ST_RUNNING:
                break
            vmax = 0.0
            bad = False
            umin = 1e308
            umax = -1e308
            for i in range(n):
                ip = i + 1 if i + 1 < n else 0
                im = i - 1 if i > 0 else n - 1
                if moved[i]:
                    if ccnt[i] >= 0 and fabs(u[i] - cref[i]) <= crad[i]:
                        phi[i] = _phi_cached(xw[i], u[i], &t, &cidx[i * kmax], ccnt[i])
                    else:
                        phi[i] = _phi_collect(xw[i], u[i], &t, &cidx[i * kmax], kmax, &nc, &dlt)
                        ccnt[i] = nc
                        cref[i] = u[i]
                        crad[i] = dlt
                    moved[i] = 0
                kap = (nh[i] - nh[im]) * inv_dx
                b = kap + force
                lam = tau + phi[i]
                ab = fabs(b) - lam
                if ab > 0.0:
                    vel = ab / eps
                    if vel * eps > ab:
                        vel = nextafter(vel, 0.0)
                    if b < 0.0:
                        vel = -vel
                else:
                    vel = 0.0
                v[i] = vel
                ux = (u[ip] - u[im]) * (0.5 * inv_dx)
                w = u[i] + dt * vel * sqrt(1.0 + ux * ux)
                un[i] = w
                if w != w or fabs(w) > 1e300:
                    bad = True
                if fabs(vel) > vmax:
                    vmax = fabs(vel)
                if w < umin:
                    umin = w
                if w > umax:
                    umax = w
            if bad:
                status = ST_NAN
                break
            for i in range(n):
                if un[i] != u[i]:
                    moved[i] = 1
                    u[i] = un[i]
            step += 1
            if vmax <= tol_v:
                still_count += 1
            else:
                still_count = 0
            if still_count >= still_needed:
                status = ST_PINNED
                break
            if umin >= h_ball:
                status = ST_BALLISTIC
                break
    return step, status, still_count
