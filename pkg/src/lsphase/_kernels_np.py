"""Pure-numpy convolution kernels: the import-time fallback when the
compiled extension is unavailable. im2col plus one BLAS matmul per call."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*k*k) patch matrix with zero same-padding."""
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    b, _, h, wd = x.shape
    o, c, k, _ = w.shape
    cols = _im2col(x, k)
    out = cols @ w.reshape(o, c * k * k).T + bias
    return out.reshape(b, h, wd, o).transpose(0, 3, 1, 2).copy()


def conv2d_grad_weights(x: np.ndarray, gy: np.ndarray, k: int):
    b, c, h, w = x.shape
    o = gy.shape[1]
    cols = _im2col(x, k)
    gmat = gy.transpose(0, 2, 3, 1).reshape(b * h * w, o)
    dw = (gmat.T @ cols).reshape(o, c, k, k)
    db = gy.sum(axis=(0, 2, 3))
    return dw, db
