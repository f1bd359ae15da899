from __future__ import annotations

import numpy as np
import pytest

from depin import kernels
from depin.front_dynamics import FrontState, default_dt
from depin.obstacle_field import ObstacleField, ObstacleParams

cython_only = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def test_backend_names():
    assert kernels.get_backend("python").__name__.endswith("_pykernels")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@cython_only
def test_phi_points_backends_agree(field2):
    field2.ensure_band(-1.0, 3.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, field2.width, 20_000)
    y = rng.uniform(-0.5, 2.5, 20_000)
    tab = field2.tables
    a = kernels.get_backend("python").phi_points(x, y, tab)
    b = kernels.get_backend("cython").phi_points(x, y, tab)
    assert np.array_equal(a, b)


def _advance(backend, field, force, n_rep=6, n_steps=400, tau=0.0):
    dx = field.width / 680
    st = FrontState.flat(field.width, dx)
    u = st.heights.copy()
    v = np.zeros_like(u)
    phi = np.zeros_like(u)
    moved = np.ones(u.size, dtype=np.uint8)
    xw = st.node_x(field.width)
    dt = default_dt(dx, 1.0)
    field.ensure_band(-1.0, 4.0)
    tab = field.tables
    mod = kernels.get_backend(backend)
    still = 0
    log = []
    for _ in range(n_rep):
        k, status, still = mod.advance(u, v, phi, xw, dx, dt, force, tau, 1.0, n_steps, tab,
                                       tab.y_lo, tab.y_hi, 3.0, 10.0, 0.0, 200, still, moved)
        log.append((k, status, still))
    return u, v, log


@cython_only
@pytest.mark.parametrize("force, tau", [(0.7, 0.0), (1.5, 0.2), (0.2, 0.0)])
def test_advance_backends_bitwise(field2, force, tau):
    ua, va, la = _advance("python", field2, force, tau=tau)
    ub, vb, lb = _advance("cython", field2, force, tau=tau)
    assert la == lb
    assert np.array_equal(ua, ub)
    assert np.array_equal(va, vb)


def test_fallback_selected_by_environment(tmp_path):
    import subprocess
    import sys

    code = "import depin.kernels as k; print(k.BACKEND)"
    env = {"DEPIN_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_explicit_empty_field_phi_zero():
    p = ObstacleParams(rho=1.0, r0=0.1, r1=0.2, f=1.0)
    fld = ObstacleField.from_centers(p, np.empty((0, 2)), width=3.0)
    x = np.linspace(0, 3, 30)
    for name in ("python", kernels.BACKEND):
        assert np.all(kernels.get_backend(name).phi_points(x, np.zeros(30), fld.tables) == 0.0)
