"""Hot-loop kernel dispatch.

The compiled Cython kernels are used when importable; otherwise the numpy
im2col fallback takes over. Set ``LSPHASE_KERNELS=numpy`` (or ``cython``) to
force a backend; forcing an unavailable backend raises at import. Both
backends implement the same math, differing only in floating-point
summation order, and both are deterministic run to run.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

try:
    from . import _kernels_cy
except ImportError:
    _kernels_cy = None

_requested = os.environ.get("LSPHASE_KERNELS", "").strip().lower()
if _requested == "numpy":
    _impl = _kernels_np
    BACKEND = "numpy"
elif _requested == "cython":
    if _kernels_cy is None:
        raise ImportError("LSPHASE_KERNELS=cython but the compiled kernels "
                          "are not built; install with the extension or unset it")
    _impl = _kernels_cy
    BACKEND = "cython"
elif _requested:
    raise ImportError(f"unknown LSPHASE_KERNELS value {_requested!r}")
elif _kernels_cy is not None:
    _impl = _kernels_cy
    BACKEND = "cython"
else:
    _impl = _kernels_np
    BACKEND = "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 correlation of (B, Cin, H, W) with
    (Cout, Cin, k, k) weights; k must be odd."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    return _impl.conv2d_forward(x, w, bias)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients (dx, dw, db) of conv2d_forward.

    dx is itself a same-padded correlation of gy with the weights rotated
    180 degrees and with in/out channels swapped, so both backends reuse
    their forward kernel for it.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    k = w.shape[2]
    dw, db = _impl.conv2d_grad_weights(x, gy, k)
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3),
                               dtype=np.float64)
    dx = _impl.conv2d_forward(gy, w_t, np.zeros(w_t.shape[0]))
    return dx, dw, db
