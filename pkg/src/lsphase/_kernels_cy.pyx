# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: same-padded stride-1 2D correlation on
(batch, channel, height, width) float64 arrays, plus the weight-gradient
accumulation. Loops run in a fixed order so results are deterministic."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] bias):
    """y[b,o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] * x[b,c,i+u-p,j+v-p]
    with zero padding p = k//2 (odd k)."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t p = K // 2
    cdef Py_ssize_t b, o, c, u, v, i, j, i0, i1, j0, j1, di, dj
    cdef double wv
    out = np.empty((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out
    cdef double[:, ::1] yp
    cdef double[:, ::1] xp

    for b in range(B):
        for o in range(O):
            yp = y[b, o]
            wv = bias[o]
            for i in range(H):
                for j in range(W):
                    yp[i, j] = wv
            for c in range(C):
                xp = x[b, c]
                for u in range(K):
                    di = u - p
                    i0 = -di if di < 0 else 0
                    i1 = H - di if di > 0 else H
                    for v in range(K):
                        dj = v - p
                        j0 = -dj if dj < 0 else 0
                        j1 = W - dj if dj > 0 else W
                        wv = w[o, c, u, v]
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                yp[i, j] += wv * xp[i + di, j + dj]
    return out


def conv2d_grad_weights(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                        Py_ssize_t K):
    """Gradients of the forward pass with respect to weights and bias."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1]
    cdef Py_ssize_t p = K // 2
    cdef Py_ssize_t b, o, c, u, v, i, j, i0, i1, j0, j1, di, dj
    cdef double acc
    dw_arr = np.zeros((O, C, K, K), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] gp
    cdef double[:, ::1] xp

    for b in range(B):
        for o in range(O):
            gp = gy[b, o]
            acc = 0.0
            for i in range(H):
                for j in range(W):
                    acc += gp[i, j]
            db[o] += acc
            for c in range(C):
                xp = x[b, c]
                for u in range(K):
                    di = u - p
                    i0 = -di if di < 0 else 0
                    i1 = H - di if di > 0 else H
                    for v in range(K):
                        dj = v - p
                        j0 = -dj if dj < 0 else 0
                        j1 = W - dj if dj > 0 else W
                        acc = 0.0
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                acc += gp[i, j] * xp[i + di, j + dj]
                        dw[o, c, u, v] += acc
    return dw_arr, db_arr
