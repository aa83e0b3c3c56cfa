# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled FSMN memory-block kernel.

Accumulation order per output element matches _fsmn_np (identity, then
look-back taps ascending, then look-ahead taps ascending), so forward
results are bitwise identical across backends.
"""

import numpy as np

ctypedef fused real:
    float
    double


def fsmn_forward(real[:, :, ::1] x, real[:, ::1] back, real[:, ::1] ahead, mask=None):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef Py_ssize_t n_back = back.shape[0], n_ahead = ahead.shape[0]
    cdef Py_ssize_t b, t, i, j, u, dd, i_hi, j_hi
    cdef real m
    cdef bint has_mask = mask is not None
    cdef const unsigned char[:, ::1] mv = mask if has_mask else None

    if real is float:
        out_np = np.empty((B, T, D), dtype=np.float32)
    else:
        out_np = np.empty((B, T, D), dtype=np.float64)
    cdef real[:, :, ::1] out = out_np

    for b in range(B):
        for t in range(T):
            for dd in range(D):
                out[b, t, dd] = x[b, t, dd]
            i_hi = t if t < n_back - 1 else n_back - 1
            for i in range(i_hi + 1):
                u = t - i
                if has_mask:
                    m = <real> mv[b, u]
                    for dd in range(D):
                        out[b, t, dd] += back[i, dd] * (x[b, u, dd] * m)
                else:
                    for dd in range(D):
                        out[b, t, dd] += back[i, dd] * x[b, u, dd]
            j_hi = T - 1 - t if T - 1 - t < n_ahead else n_ahead
            for j in range(1, j_hi + 1):
                u = t + j
                if has_mask:
                    m = <real> mv[b, u]
                    for dd in range(D):
                        out[b, t, dd] += ahead[j - 1, dd] * (x[b, u, dd] * m)
                else:
                    for dd in range(D):
                        out[b, t, dd] += ahead[j - 1, dd] * x[b, u, dd]
    return out_np


def fsmn_backward(real[:, :, ::1] g, real[:, :, ::1] x,
                  real[:, ::1] back, real[:, ::1] ahead, mask=None):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef Py_ssize_t n_back = back.shape[0], n_ahead = ahead.shape[0]
    cdef Py_ssize_t b, t, i, j, u, dd, i_hi, j_hi
    cdef real acc, m
    cdef bint has_mask = mask is not None
    cdef const unsigned char[:, ::1] mv = mask if has_mask else None

    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    gx_np = np.empty((B, T, D), dtype=dt)
    gb_np = np.zeros((n_back, D), dtype=dt)
    ga_np = np.zeros((n_ahead, D), dtype=dt)
    cdef real[:, :, ::1] gx = gx_np
    cdef real[:, ::1] gb = gb_np
    cdef real[:, ::1] ga = ga_np

    # d/dx: identity path plus tap paths gated by the mask at the source
    for b in range(B):
        for u in range(T):
            if has_mask and mv[b, u] == 0:
                for dd in range(D):
                    gx[b, u, dd] = g[b, u, dd]
                continue
            i_hi = T - 1 - u if T - 1 - u < n_back - 1 else n_back - 1
            j_hi = u if u < n_ahead else n_ahead
            for dd in range(D):
                acc = g[b, u, dd]
                for i in range(i_hi + 1):
                    acc += back[i, dd] * g[b, u + i, dd]
                for j in range(1, j_hi + 1):
                    acc += ahead[j - 1, dd] * g[b, u - j, dd]
                gx[b, u, dd] = acc

    # d/dtaps: correlate upstream gradient with the gated sources
    for b in range(B):
        for t in range(T):
            i_hi = t if t < n_back - 1 else n_back - 1
            for i in range(i_hi + 1):
                u = t - i
                if has_mask and mv[b, u] == 0:
                    continue
                for dd in range(D):
                    gb[i, dd] += g[b, t, dd] * x[b, u, dd]
            j_hi = T - 1 - t if T - 1 - t < n_ahead else n_ahead
            for j in range(1, j_hi + 1):
                u = t + j
                if has_mask and mv[b, u] == 0:
                    continue
                for dd in range(D):
                    ga[j - 1, dd] += g[b, t, dd] * x[b, u, dd]
    return gx_np, gb_np, ga_np
