"""Hot inner loops of the autodiff substrate.

Two interchangeable backends implement the same five kernels:

* ``numba`` -- explicit loops compiled with ``@njit`` (default when numba imports)
* ``numpy`` -- vectorized array code, no compilation

Set ``HPAC_NUMBA=0`` in the environment to force the numpy path, or call
:func:`set_backend` at runtime. Inputs are normalized here (contiguous
float64, 2-D softmax rows) so each backend sees the same simple layouts.
"""

import os

import numpy as np

from . import _numpy

try:
    from . import _numba
except ImportError:  # numba missing or broken
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba


def _default_backend():
    flag = os.environ.get("HPAC_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or _numba is None:
        return "numpy"
    return "numba"


_active = _default_backend()


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Switch kernels globally; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    prev, _active = _active, name
    return prev


def _impl():
    return _BACKENDS[_active]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(x, w):
    """'same' zero-padded 1-D convolution: x (N, L, d_in), w (width, d_in, d_out)."""
    return _impl().conv1d_forward(_f64(x), _f64(w))


def conv1d_backward(x, w, g):
    """Gradients (dx, dw) of :func:`conv1d_forward` given upstream g (N, L, d_out)."""
    return _impl().conv1d_backward(_f64(x), _f64(w), _f64(g))


def masked_softmax_forward(x, mask):
    """Softmax over the last axis restricted to ``mask``; fully masked rows give zeros."""
    shape = x.shape
    mask = np.broadcast_to(np.asarray(mask, dtype=np.bool_), shape)
    length = shape[-1] if shape else 1
    x2 = _f64(x).reshape(-1, length)
    m2 = np.ascontiguousarray(mask).reshape(-1, length)
    return _impl().masked_softmax_forward(x2, m2).reshape(shape)


def masked_softmax_backward(y, g):
    shape = y.shape
    length = shape[-1] if shape else 1
    out = _impl().masked_softmax_backward(_f64(y).reshape(-1, length), _f64(g).reshape(-1, length))
    return out.reshape(shape)


def embedding_backward(ids, g, vocab):
    """Scatter-add rows of g (R, d) into a (vocab, d) table at integer ``ids`` (R,)."""
    ids = np.ascontiguousarray(ids, dtype=np.int64).reshape(-1)
    return _impl().embedding_backward(ids, _f64(g).reshape(ids.size, -1), int(vocab))
