"""Backend selection for the hot loops.

The compiled extension ``depin._ckernels`` is used when it imports; otherwise
the numpy implementation in ``depin._pykernels`` takes over.  Setting the
environment variable ``DEPIN_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import (  # noqa: F401  (status codes are backend independent)
    ST_BALLISTIC,
    ST_NAN,
    ST_NEED_BAND,
    ST_PINNED,
    ST_RUNNING,
    ST_SLOPE,
)

_compiled = None
if os.environ.get("DEPIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('cython', 'python' or None = active)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; build with "
                              "`pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def phi_points(xw, y, tab):
    return _impl.phi_points(xw, y, tab)


def advance(*args):
    return _impl.advance(*args)
