"""Hot-loop kernels. The compiled extension is used when it was built;
otherwise the numpy fallback is selected at import time."""

from __future__ import annotations

import contextlib

import numpy as np

try:
    from sst import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
from sst import _fallback

IGNORE = 255

_impl = _compiled if _compiled is not None else _fallback
BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily route every kernel through ``name`` ("cython" or "python")."""
    global _impl, BACKEND
    if name == "cython" and _compiled is None:
        raise RuntimeError("compiled kernels are not built")
    if name not in ("cython", "python"):
        raise ValueError(f"unknown backend {name!r}")
    saved = (_impl, BACKEND)
    _impl, BACKEND = (_compiled if name == "cython" else _fallback), name
    try:
        yield
    finally:
        _impl, BACKEND = saved


def fill_capsule(out, a, b, radius, value, row_min=-(2**31), row_max=2**31 - 1):
    _impl.fill_capsule(out, int(a[0]), int(a[1]), int(b[0]), int(b[1]),
                       int(radius), int(value), int(row_min), int(row_max))


def remap(labels, lut, ignore=IGNORE):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    lut = np.ascontiguousarray(lut, dtype=np.int64)
    return _impl.remap(labels, lut, ignore)


def adjacency(labels, Z, ignore=IGNORE):
    return _impl.adjacency(np.ascontiguousarray(labels, dtype=np.uint8), int(Z), ignore)


def confusion(gt, pred, Z, ignore=IGNORE):
    gt = np.ascontiguousarray(np.ravel(gt), dtype=np.int64)
    pred = np.ascontiguousarray(np.ravel(pred), dtype=np.int64)
    return _impl.confusion(gt, pred, int(Z), ignore)
