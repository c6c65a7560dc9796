"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the NumPy
fallback takes over.  ``CDCNET_KERNELS=numpy`` (or ``native``) forces a
choice, and :func:`use_backend` swaps it temporarily, which the benchmark and
the cross-backend tests rely on.  The compiled kernels are float32-only;
float64 inputs always route to the NumPy backend, which is how the
double-precision verification mode runs.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import numpy_backend

try:
    from . import _native
except ImportError:
    _native = None

_BACKENDS = {"numpy": numpy_backend}
if _native is not None:
    _BACKENDS["native"] = _native

_active = os.environ.get("CDCNET_KERNELS", "native" if _native is not None else "numpy")
if _active not in _BACKENDS:
    raise ImportError(f"requested kernel backend {_active!r} is not available")


def available_backends():
    return tuple(sorted(_BACKENDS))


def active_backend():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = name


@contextmanager
def use_backend(name):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _impl(*arrays):
    if _active == "native" and all(a.dtype == np.float32 for a in arrays):
        return _BACKENDS["native"]
    return numpy_backend


def conv3d_forward(x, w, b, stride, pad):
    return _impl(x, w).conv3d_forward(x, w, b, stride, pad)


def conv3d_backward(gy, x, w, stride, pad):
    return _impl(gy, x, w).conv3d_backward(gy, x, w, stride, pad)


def maxpool3d_forward(x, kernel):
    return _impl(x).maxpool3d_forward(x, kernel)


def maxpool3d_backward(gy, idx, in_shape):
    return _impl(gy).maxpool3d_backward(gy, idx, in_shape)


def cdc_forward(x, f, b, stride, pad):
    return _impl(x, f).cdc_forward(x, f, b, stride, pad)


def cdc_backward(gy, x, f, stride, pad):
    return _impl(gy, x, f).cdc_backward(gy, x, f, stride, pad)
