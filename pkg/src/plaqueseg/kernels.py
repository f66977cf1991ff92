"""Backend selection for the hot loops.

The compiled ``_ckernels`` module is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is used. Set ``PLAQUESEG_PURE_PYTHON=1``
before import to force the fallback.

All functions take C-contiguous arrays: ``float32``/``float64`` feature maps,
``uint8`` masks and ``int64`` point lists.
"""
import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("PLAQUESEG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def backends():
    """Available backend modules keyed by name (used by tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def im2col(x, kh, kw, stride, padding, dilation, ho, wo):
    """NCHW -> (N*Ho*Wo, kh*kw*C) patches; column order (i, j, c)."""
    return _impl.im2col(_c(x), kh, kw, stride, padding, dilation, ho, wo)


def col2im(cols, n, c, h, w, kh, kw, stride, padding, dilation, ho, wo):
    """Adjoint of :func:`im2col`, returning the unpadded NCHW gradient."""
    return _impl.col2im(_c(cols), n, c, h, w, kh, kw, stride, padding, dilation, ho, wo)


def maxpool2x2(x):
    return _impl.maxpool2x2(_c(x))


def maxpool2x2_backward(gout, arg):
    return _impl.maxpool2x2_backward(_c(gout), _c(arg))


def erode(mask, kernel):
    return _impl.erode(_u8(mask), _u8(kernel))


def label(mask, connectivity=8):
    return _impl.label(_u8(mask), connectivity)


def fill_holes(mask):
    return _impl.fill_holes(_u8(mask))


def min_sq_dists(a, b):
    return _impl.min_sq_dists(_i64(a), _i64(b))


def _c(a):
    # compiled memoryviews need writable C-contiguous buffers (broadcast views are neither)
    if a.flags.c_contiguous and a.flags.writeable:
        return a
    return np.array(a, order="C")


def _u8(a):
    return _c(np.asarray(a, dtype=np.uint8))


def _i64(a):
    return _c(np.asarray(a, dtype=np.int64).reshape(-1, 2))
