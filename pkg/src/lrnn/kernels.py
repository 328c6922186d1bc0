"""Kernel selection: the compiled extension if importable, else numpy.

Set ``LRNN_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("LRNN_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _ckernels as _impl  # type: ignore[attr-defined]
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"


def forward(flat, W: np.ndarray, B: np.ndarray) -> np.ndarray:
    W = np.ascontiguousarray(W, dtype=np.float64).reshape(-1, flat.d, flat.d)
    B = np.ascontiguousarray(B, dtype=np.float64).reshape(-1, flat.d)
    return _impl.forward(flat, W, B)


def backward(flat, values: np.ndarray, W: np.ndarray, B: np.ndarray, grad: np.ndarray):
    """Returns ``(dW, dB)``; ``grad`` is consumed (modified in place)."""
    W = np.ascontiguousarray(W, dtype=np.float64).reshape(-1, flat.d, flat.d)
    B = np.ascontiguousarray(B, dtype=np.float64).reshape(-1, flat.d)
    return _impl.backward(flat, values, W, B, grad)
