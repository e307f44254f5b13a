"""Hot-loop kernels with a compiled backend and a numpy fallback.

The backend is chosen once at import: the Cython extension ``_ckernels`` when
it is importable, otherwise ``_npkernels``. Set ``ARTIFACT_KERNELS=numpy`` to
force the fallback. Both backends are always importable by name through
:func:`get_backend` so they can be compared against each other.
"""
import os

import numpy as np

from . import _npkernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "bilinear",
    "warp",
    "masked_min_pool",
    "masked_max_pool",
    "conv2d_same",
]


class _NumpyBackend:
    name = "numpy"

    @staticmethod
    def bilinear(img, u, v):
        return _npkernels.bilinear(np.asarray(img, dtype=np.float64), u, v)

    @staticmethod
    def warp(src, depth, valid, fx, fy, cx, cy, rot, trans):
        return _npkernels.warp(src, depth, valid, fx, fy, cx, cy, np.asarray(rot), np.asarray(trans))

    @staticmethod
    def masked_min_pool(depth, valid, k):
        return _npkernels.masked_min_pool(depth, valid, k)

    @staticmethod
    def masked_max_pool(depth, valid, k):
        return _npkernels.masked_max_pool(depth, valid, k)

    @staticmethod
    def conv2d_same(x, weight, bias):
        return _npkernels.conv2d_same(x, weight, bias)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


class _CythonBackend:
    name = "cython"

    @staticmethod
    def bilinear(img, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        shape = u.shape
        # NaN coordinates fail the C bounds test and come back out of bounds
        out, inb = _ckernels.bilinear(_f64(img), _f64(u.ravel()), _f64(v.ravel()))
        return out.reshape(shape + (out.shape[1],)), inb.astype(bool).reshape(shape)

    @staticmethod
    def warp(src, depth, valid, fx, fy, cx, cy, rot, trans):
        out, mask = _ckernels.warp(
            _f64(src), _f64(depth), _u8(valid), float(fx), float(fy), float(cx), float(cy),
            _f64(rot), _f64(np.ravel(trans)),
        )
        return out, mask.astype(bool)

    @staticmethod
    def masked_min_pool(depth, valid, k):
        return _ckernels.masked_min_pool(_f64(depth), _u8(valid), int(k))

    @staticmethod
    def masked_max_pool(depth, valid, k):
        return _ckernels.masked_max_pool(_f64(depth), _u8(valid), int(k))

    @staticmethod
    def conv2d_same(x, weight, bias):
        return _ckernels.conv2d_same(_f64(x), _f64(weight), _f64(bias))


_BACKENDS = {"numpy": _NumpyBackend}
if _ckernels is not None:
    _BACKENDS["cython"] = _CythonBackend


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the backend object called ``name`` (default: the active one)."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


_requested = os.environ.get("ARTIFACT_KERNELS", "").strip().lower()
if _requested:
    _active = get_backend(_requested)
else:
    _active = _BACKENDS.get("cython", _NumpyBackend)

BACKEND = _active.name

bilinear = _active.bilinear
warp = _active.warp
masked_min_pool = _active.masked_min_pool
masked_max_pool = _active.masked_max_pool
conv2d_same = _active.conv2d_same
