"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``FLOODLAG_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementations are used.
"""
import os

import numpy as np

from . import _pykernels

_force_pure = os.environ.get("FLOODLAG_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def _as_ring_arrays(rings):
    verts = np.ascontiguousarray(np.concatenate(rings, axis=0), dtype=np.float64)
    ptr = np.zeros(len(rings) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rings])
    return verts, ptr


def coverage_block(rings, origin_x, origin_y, pixel_size, row0, row1, col0, col1, backend=None):
    """Per-pixel coverage fractions for a block of a north-up grid.

    ``rings`` is a sequence of open ``(n, 2)`` vertex arrays, exteriors
    counter-clockwise and holes clockwise.
    """
    impl = _select(backend)
    verts, ptr = _as_ring_arrays(rings)
    return impl.coverage_block(verts, ptr, float(origin_x), float(origin_y), float(pixel_size),
                               int(row0), int(row1), int(col0), int(col1))


def cond_poisson_derivs(X, y, offset, ptr, beta, backend=None):
    impl = _select(backend)
    return impl.cond_poisson_derivs(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(offset, dtype=np.float64),
        np.ascontiguousarray(ptr, dtype=np.int64),
        np.ascontiguousarray(beta, dtype=np.float64),
    )


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if _impl is _pykernels:
            from . import _ckernels
            return _ckernels
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names
