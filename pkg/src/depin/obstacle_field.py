"""Random friction field generated by a Poisson array of mollified disc obstacles.

The field is ``phi(x, y) = min(f * sum_i g(|p - c_i|), f)`` where ``g`` is the
radial profile of a unit-mass bump mollifier of radius ``(r1 - r0) / 2``
convolved with the indicator of a disc of radius ``r0 + (r1 - r0) / 2``.
Hence ``phi == f`` within ``r0`` of any centre and ``phi == 0`` farther than
``r1`` from every centre.

The plane is represented by a window that is periodic in ``x`` (width ``W``)
and lazily generated in ``y`` in horizontal strips.  Each strip draws its
centres from its own counter-based RNG stream keyed by ``(seed, strip index)``
so the set of centres never depends on the order in which strips were built.

Generation and band extension are single-writer operations.  Once built, a
field (or a snapshot of its :attr:`ObstacleField.tables`) is safe to read
from many workers.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.spatial import cKDTree

N_PROFILE_KNOTS = 2048
_STRIP_KEY_OFFSET = 1 << 31


class OutOfBandError(ValueError):
    """Raised when a frozen field is queried outside its generated band."""


@dataclass(frozen=True)
class ObstacleParams:
    """Obstacle statistics: intensity, radii, strength and RNG seed."""

    rho: float
    r0: float
    r1: float
    f: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho!r}")
        if not self.r0 > 0:
            raise ValueError(f"r0 must be > 0, got {self.r0!r}")
        if not self.r1 > self.r0:
            raise ValueError(f"r1 must exceed r0 (r0={self.r0!r}, r1={self.r1!r})")
        if not self.f >= 0:
            raise ValueError(f"f must be >= 0, got {self.f!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed!r}")

    @property
    def mollifier_radius(self) -> float:
        return 0.5 * (self.r1 - self.r0)

    @property
    def disc_radius(self) -> float:
        return self.r0 + 0.5 * (self.r1 - self.r0)

    @property
    def spacing(self) -> float:
        """Typical obstacle spacing ``1/sqrt(rho)``."""
        return 1.0 / math.sqrt(self.rho)


@dataclass(frozen=True)
class Domain:
    width: float
    y_min: float
    y_max: float
    periodic_x: bool = True

    def __post_init__(self) -> None:
        if not self.width > 0:
            raise ValueError(f"domain width must be > 0, got {self.width!r}")
        if not self.y_max > self.y_min:
            raise ValueError(f"need y_max > y_min, got [{self.y_min!r}, {self.y_max!r}]")


# --------------------------------------------------------------------------
# Mollifier and the radial profile of an isolated obstacle


def bump(s):
    """Standard bump ``exp(-1/(1-s^2))`` on ``|s| < 1``, zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_scalar(s: float) -> float:
    return math.exp(-1.0 / (1.0 - s * s)) if abs(s) < 1.0 else 0.0


@lru_cache(maxsize=None)
def bump_mass() -> float:
    """2D mass of the unit-radius bump, ``2 pi int_0^1 bump(s) s ds``."""
    val, _ = integrate.quad(lambda s: _bump_scalar(s) * s, 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
    return 2.0 * math.pi * val


def mollifier(r, radius: float):
    """Radially symmetric unit-mass mollifier of the given support radius."""
    return bump(np.asarray(r, dtype=float) / radius) / (radius**2 * bump_mass())


def _arc_fraction(d: float, s: float, big_r: float) -> float:
    # fraction of the circle |z - p| = s (|p - c| = d) that lies inside |z - c| < big_r
    if d + s <= big_r:
        return 1.0
    if d >= big_r + s:
        return 0.0
    if s == 0.0 or d == 0.0:
        return 1.0 if d < big_r else 0.0
    c = (d * d + s * s - big_r * big_r) / (2.0 * d * s)
    return math.acos(min(1.0, max(-1.0, c))) / math.pi


def isolated_profile_value(d: float, r0: float, r1: float) -> float:
    """Value of ``eta * chi_disc`` at distance ``d`` from an isolated centre.

    Evaluated by one-dimensional quadrature over the mollifier radius with the
    angular integral done in closed form.
    """
    a = 0.5 * (r1 - r0)
    big_r = r0 + a
    if d <= r0:
        return 1.0
    if d >= r1:
        return 0.0
    mass = bump_mass()

    def integrand(t: float) -> float:
        return _bump_scalar(t) * 2.0 * math.pi * t * _arc_fraction(d, a * t, big_r)

    kink = abs(big_r - d) / a
    pts = [kink] if 0.0 < kink < 1.0 else None
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=pts, epsabs=1e-14, epsrel=1e-12, limit=200)
    return min(1.0, max(0.0, val / mass))


class RadialProfile(NamedTuple):
    """Piecewise-cubic table of the isolated obstacle profile on ``[r0, r1]``."""

    r0: float
    r1: float
    knots: np.ndarray  # (m+1,) uniform knots
    coef: np.ndarray  # (m, 4) cubic coefficients per interval, highest power first
    lipschitz_unit: float  # L1 norm of the gradient of the unit-radius mollifier

    @property
    def step(self) -> float:
        return (self.r1 - self.r0) / (len(self.knots) - 1)

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        return _eval_profile(d, self.r0, self.r1, self.knots, self.coef)


def _eval_profile(d: np.ndarray, r0: float, r1: float, knots: np.ndarray, coef: np.ndarray) -> np.ndarray:
    m = len(knots) - 1
    hk = (r1 - r0) / m
    out = np.zeros_like(d)
    out[d <= r0] = 1.0
    mid = (d > r0) & (d < r1)
    dm = d[mid]
    k = np.minimum(((dm - r0) / hk).astype(np.int64), m - 1)
    s = dm - knots[k]
    c = coef[k]
    out[mid] = ((c[:, 0] * s + c[:, 1]) * s + c[:, 2]) * s + c[:, 3]
    return out


@lru_cache(maxsize=16)
def radial_profile(r0: float, r1: float, n_knots: int = N_PROFILE_KNOTS) -> RadialProfile:
    """Tabulate the isolated-obstacle profile and its monotone cubic interpolant."""
    knots = np.linspace(r0, r1, n_knots)
    vals = np.array([isolated_profile_value(float(d), r0, r1) for d in knots])
    vals[0], vals[-1] = 1.0, 0.0
    # profile is nonincreasing in d; quadrature noise must not break that
    vals = np.minimum.accumulate(vals)
    pchip = PchipInterpolator(knots, vals)
    coef = np.ascontiguousarray(pchip.c.T)

    # Lipschitz constant of the unit mollifier in L1: 2 pi int |bump'(s)| s ds / mass
    def dbump(s: float) -> float:
        if s >= 1.0:
            return 0.0
        return _bump_scalar(s) * 2.0 * s / (1.0 - s * s) ** 2

    lip, _ = integrate.quad(lambda s: dbump(s) * s, 0.0, 1.0, epsrel=1e-10)
    lip = 2.0 * math.pi * lip / bump_mass()
    return RadialProfile(r0, r1, knots, coef, lip)


# --------------------------------------------------------------------------
# Poisson sampling


def strip_rng(seed: int, strip: int) -> np.random.Generator:
    """Counter-based generator for one horizontal strip."""
    key = strip + _STRIP_KEY_OFFSET
    if key < 0:
        raise ValueError(f"strip index {strip} out of range")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def sample_poisson(
    params: ObstacleParams,
    region: tuple[float, float, float, float],
    rng: np.random.Generator,
    width: Optional[float] = None,
) -> np.ndarray:
    """Draw Poisson(rho) points in ``region = (x0, x1, y0, y1)``.

    Returns an ``(N, 2)`` array.  With ``width`` given, x coordinates are
    wrapped into ``[0, width)``.
    """
    x0, x1, y0, y1 = region
    area = max(0.0, x1 - x0) * max(0.0, y1 - y0)
    if area == 0.0:
        return np.empty((0, 2))
    n = int(rng.poisson(params.rho * area))
    xs = x0 + (x1 - x0) * rng.random(n)
    ys = y0 + (y1 - y0) * rng.random(n)
    if width is not None:
        xs = np.mod(xs, width)
        xs[xs >= width] = 0.0
    return np.column_stack([xs, ys])


# --------------------------------------------------------------------------
# Uniform-cell spatial index


class FieldTables(NamedTuple):
    """Flat arrays consumed by the compiled and pure-Python kernels."""

    cx: np.ndarray  # centre x, sorted by cell
    cy: np.ndarray
    cell_start: np.ndarray  # int64, (nrows*ncx + 1,)
    ncx: int
    cell_w: float
    cell_h: float
    row0: int
    nrows: int
    width: float
    f: float
    r0: float
    r1: float
    knots: np.ndarray
    coef: np.ndarray
    y_lo: float  # band in which queries are valid (centre band shrunk by r1)
    y_hi: float


def _cell_of(x: np.ndarray, y: np.ndarray, ncx: int, cell_w: float, cell_h: float):
    col = np.minimum((x / cell_w).astype(np.int64), ncx - 1)
    row = np.floor(y / cell_h).astype(np.int64)
    return col, row


def build_tables(
    centers: np.ndarray, params: ObstacleParams, domain: Domain, strip_height: float
) -> FieldTables:
    r1 = params.r1
    ncx = max(1, int(domain.width // r1))
    cell_w = domain.width / ncx
    per_strip = max(1, int(strip_height // r1))
    cell_h = strip_height / per_strip
    row0 = int(math.floor(domain.y_min / cell_h + 0.5))
    row_end = int(math.floor(domain.y_max / cell_h + 0.5))
    nrows = max(1, row_end - row0)
    if len(centers):
        col, row = _cell_of(centers[:, 0], centers[:, 1], ncx, cell_w, cell_h)
        row = np.clip(row - row0, 0, nrows - 1)
        cell = row * ncx + col
        order = np.argsort(cell, kind="stable")
        cx = np.ascontiguousarray(centers[order, 0])
        cy = np.ascontiguousarray(centers[order, 1])
        counts = np.bincount(cell, minlength=nrows * ncx)
    else:
        cx = np.empty(0)
        cy = np.empty(0)
        counts = np.zeros(nrows * ncx, dtype=np.int64)
    cell_start = np.zeros(nrows * ncx + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    prof = radial_profile(params.r0, params.r1)
    return FieldTables(
        cx, cy, cell_start, ncx, cell_w, cell_h, row0, nrows, domain.width,
        float(params.f), params.r0, params.r1, prof.knots, prof.coef,
        domain.y_min + r1, domain.y_max - r1,
    )


# --------------------------------------------------------------------------
# The field


class ObstacleField:
    """Poisson obstacle field on an x-periodic window, extended lazily in y.

    Parameters
    ----------
    params : ObstacleParams
    width : float, optional
        Period in x.  Defaults to ``24 / sqrt(rho)``.
    y_min, y_max : float
        Initial band; it is rounded outward to whole strips.
    strip_height : float, optional
        Height of one generation strip.  Defaults to ``8 / sqrt(rho)``.
    frozen : bool
        When True, queries outside the band raise :class:`OutOfBandError`
        instead of extending it.
    """

    def __init__(
        self,
        params: ObstacleParams,
        width: Optional[float] = None,
        y_min: float = -1.0,
        y_max: float = 1.0,
        strip_height: Optional[float] = None,
        frozen: bool = False,
        _explicit: Optional[np.ndarray] = None,
    ) -> None:
        self.params = params
        width = float(width) if width is not None else 24.0 * params.spacing
        if width <= 2.0 * params.r1:
            raise ValueError(f"window width {width} must exceed 2*r1={2 * params.r1}")
        self.strip_height = float(strip_height) if strip_height is not None else 8.0 * params.spacing
        if self.strip_height <= 0:
            raise ValueError("strip_height must be > 0")
        self.frozen = frozen
        self._explicit = None if _explicit is None else np.asarray(_explicit, dtype=float).reshape(-1, 2)
        self._strips: dict[int, np.ndarray] = {}
        self.width = width
        k_lo = int(math.floor(y_min / self.strip_height))
        k_hi = int(math.ceil(y_max / self.strip_height))
        if k_hi <= k_lo:
            k_hi = k_lo + 1
        self._k_lo, self._k_hi = k_lo, k_hi
        for k in range(k_lo, k_hi):
            self._strips[k] = self._generate_strip(k)
        self._rebuild()

    # -- construction helpers

    @classmethod
    def from_centers(
        cls,
        params: ObstacleParams,
        centers: Iterable,
        width: float,
        y_min: float = -1.0,
        y_max: float = 1.0,
        strip_height: Optional[float] = None,
        frozen: bool = False,
    ) -> "ObstacleField":
        """Field holding exactly the given centres; strips beyond them are empty."""
        arr = np.asarray(list(centers) if not isinstance(centers, np.ndarray) else centers, dtype=float)
        arr = arr.reshape(-1, 2).copy()
        if len(arr):
            arr[:, 0] = np.mod(arr[:, 0], width)
            lo, hi = float(arr[:, 1].min()), float(arr[:, 1].max())
            y_min, y_max = min(y_min, lo - params.r1), max(y_max, hi + params.r1)
        return cls(params, width=width, y_min=y_min, y_max=y_max, strip_height=strip_height,
                   frozen=frozen, _explicit=arr)

    @property
    def is_explicit(self) -> bool:
        return self._explicit is not None

    def _generate_strip(self, k: int) -> np.ndarray:
        y0 = k * self.strip_height
        y1 = (k + 1) * self.strip_height
        if self._explicit is not None:
            pts = self._explicit
            sel = (pts[:, 1] >= y0) & (pts[:, 1] < y1)
            return pts[sel]
        rng = strip_rng(self.params.seed, k)
        return sample_poisson(self.params, (0.0, self.width, y0, y1), rng, width=self.width)

    def _rebuild(self) -> None:
        ks = sorted(self._strips)
        parts = [self._strips[k] for k in ks]
        self.centers = np.concatenate(parts) if parts else np.empty((0, 2))
        self.domain = Domain(self.width, self._k_lo * self.strip_height, self._k_hi * self.strip_height)
        self.tables = build_tables(self.centers, self.params, self.domain, self.strip_height)

    # -- band management

    def extend_band(self, new_y_max: float) -> "ObstacleField":
        """Generate strips until the band reaches ``new_y_max``; returns self."""
        if new_y_max <= self.domain.y_max:
            return self
        if self.frozen:
            raise OutOfBandError(f"frozen field: cannot extend to y={new_y_max}")
        k_hi = int(math.ceil(new_y_max / self.strip_height))
        for k in range(self._k_hi, k_hi):
            self._strips[k] = self._generate_strip(k)
        self._k_hi = k_hi
        self._rebuild()
        return self

    def extend_below(self, new_y_min: float) -> "ObstacleField":
        if new_y_min >= self.domain.y_min:
            return self
        if self.frozen:
            raise OutOfBandError(f"frozen field: cannot extend to y={new_y_min}")
        k_lo = int(math.floor(new_y_min / self.strip_height))
        for k in range(k_lo, self._k_lo):
            self._strips[k] = self._generate_strip(k)
        self._k_lo = k_lo
        self._rebuild()
        return self

    def ensure_band(self, y_lo: float, y_hi: float) -> "ObstacleField":
        """Make queries valid for heights in ``[y_lo, y_hi]``."""
        r1 = self.params.r1
        if y_hi + r1 > self.domain.y_max:
            self.extend_band(y_hi + r1 + 1e-9)
        if y_lo - r1 < self.domain.y_min:
            self.extend_below(y_lo - r1 - 1e-9)
        return self

    # -- queries

    def phi(self, x, y):
        """Friction value at ``(x, y)``; accepts scalars or arrays."""
        from . import kernels

        xa = np.atleast_1d(np.asarray(x, dtype=float))
        ya = np.atleast_1d(np.asarray(y, dtype=float))
        xa, ya = np.broadcast_arrays(xa, ya)
        if ya.size:
            lo, hi = float(ya.min()), float(ya.max())
            if lo < self.tables.y_lo or hi > self.tables.y_hi:
                if self.frozen:
                    raise OutOfBandError(f"query y in [{lo}, {hi}] outside band "
                                         f"[{self.tables.y_lo}, {self.tables.y_hi}]")
                self.ensure_band(lo, hi)
        xw = np.mod(np.ascontiguousarray(xa, dtype=float).ravel(), self.width)
        out = kernels.phi_points(xw, np.ascontiguousarray(ya, dtype=float).ravel(), self.tables)
        out = out.reshape(xa.shape)
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            return float(out[0])
        return out

    def profile(self) -> RadialProfile:
        return radial_profile(self.params.r0, self.params.r1)

    def lipschitz_bound(self) -> float:
        """Upper bound on the slope of ``phi``: ``f * L_eta / ((r1 - r0)/2)``."""
        return self.params.f * self.profile().lipschitz_unit / self.params.mollifier_radius

    def shifted(self, shift_x: float) -> "ObstacleField":
        """Copy translated by ``shift_x`` in x (shift reduced modulo the period)."""
        s = math.fmod(shift_x, self.width)
        pts = self.centers.copy()
        if s != 0.0:
            pts[:, 0] = np.mod(pts[:, 0] + s, self.width)
        return ObstacleField.from_centers(self.params, pts, self.width, self.domain.y_min,
                                          self.domain.y_max, self.strip_height, self.frozen)

    def nearest_obstacle_stats(self) -> float:
        """Mean distance from each centre to its nearest neighbour (periodic in x)."""
        pts = self.centers
        if len(pts) < 2:
            raise ValueError("need at least two obstacle centres")
        height = self.domain.y_max - self.domain.y_min
        data = np.column_stack([np.mod(pts[:, 0], self.width), pts[:, 1] - self.domain.y_min])
        # y box three times the band height so wrapped y-distances never win
        tree = cKDTree(data, boxsize=[self.width, 3.0 * height])
        dist, _ = tree.query(data, k=2)
        return float(np.mean(dist[:, 1]))

    # -- serialisation

    def header(self) -> dict:
        return {
            "type": "header",
            "params": asdict(self.params),
            "width": self.width,
            "strip_height": self.strip_height,
            "y_min": self.domain.y_min,
            "y_max": self.domain.y_max,
            "explicit": self.is_explicit,
            "n_centers": int(len(self.centers)),
        }

    def dump(self, path, extra_header: Optional[dict] = None) -> None:
        """Write a JSON-lines file: one header record, then one record per centre."""
        head = self.header()
        if extra_header:
            head.update(extra_header)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for x, y in self.centers.tolist():
                fh.write(json.dumps({"x": x, "y": y}) + "\n")

    @classmethod
    def load(cls, path) -> "ObstacleField":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = json.loads(lines[0])
        if head.get("type") != "header":
            raise ValueError(f"{path}: first record is not a header")
        params = ObstacleParams(**head["params"])
        pts = [(rec["x"], rec["y"]) for rec in map(json.loads, lines[1:]) if rec]
        arr = np.array(pts, dtype=float).reshape(-1, 2)
        if head.get("explicit", False):
            return cls.from_centers(params, arr, head["width"], head["y_min"], head["y_max"],
                                    head["strip_height"])
        # centres come from the file, not from regeneration; the seed still drives
        # any later extension of the band
        field = cls(params, width=head["width"], y_min=head["y_min"], y_max=head["y_max"],
                    strip_height=head["strip_height"], _explicit=arr)
        field._explicit = None
        return field
