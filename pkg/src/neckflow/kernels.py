"""Backend selection for the stencil kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Setting ``NECKFLOW_PURE=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("NECKFLOW_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def _prep(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def graph_rhs(u, y, h_y, h_th, rescaled, out=None, backend=None):
    impl = _pick(backend)
    u = _prep(u)
    if out is None:
        out = np.empty_like(u)
    impl.graph_rhs(u, _prep(y), float(h_y), float(h_th), bool(rescaled), out)
    return out


def lc_apply(v, y, h_y, h_th, out=None, backend=None):
    impl = _pick(backend)
    v = _prep(v)
    if out is None:
        out = np.empty_like(v)
    impl.lc_apply(v, _prep(y), float(h_y), float(h_th), out)
    return out


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
