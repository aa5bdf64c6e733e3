"""Kernel backend selection.

The compiled extension is used when it imports; set ``HOIKIT_PURE=1`` to force
the numpy fallback. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _pykernels as pure

compiled = None
if os.environ.get("HOIKIT_PURE") != "1":
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

BACKEND = "cython" if compiled is not None else "numpy"


def backends():
    """Mapping of available backend name to module."""
    out = {"numpy": pure}
    if compiled is not None:
        out["cython"] = compiled
    return out


def _get(backend):
    if backend is None:
        return compiled if compiled is not None else pure
    return backends()[backend]


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def nearest_sqdist(a, b, backend=None):
    """Squared distance to and index of the nearest ``b`` row, for every ``a`` row."""
    return _get(backend).nearest_sqdist(_c(a), _c(b))


def chamfer(a, b, backend=None):
    return float(_get(backend).chamfer(_c(a), _c(b)))


def composite(u, v, z, radius, opacity, color, width, row0, row1, backend=None):
    return _get(backend).composite(_c(u), _c(v), _c(z), _c(radius), _c(opacity),
                                   _c(color), int(width), int(row0), int(row1))
