"""Pure-numpy FSMN memory-block kernel (fallback backend).

Both backends use the same per-element accumulation order (identity
term, then look-back taps in ascending order, then look-ahead taps in
ascending order) so their forward outputs are bitwise identical to the
position-by-position direct summation.
"""

import numpy as np


def fsmn_forward(x, back, ahead, mask=None):
    """out[b,t] = x[b,t] + sum_i back[i] * s[b,t-i] + sum_j ahead[j-1] * s[b,t+j].

    x: (B, T, D); back: (N1+1, D); ahead: (N2, D); mask: (B, T) of 0/1 or None.
    Sources s are x gated by mask; out-of-range positions contribute nothing.
    """
    T = x.shape[1]
    out = x.copy()
    s = x if mask is None else x * mask.astype(x.dtype)[:, :, None]
    for i in range(back.shape[0]):
        out[:, i:, :] += back[i] * s[:, : T - i, :]
    for j in range(1, ahead.shape[0] + 1):
        out[:, : T - j, :] += ahead[j - 1] * s[:, j:, :]
    return out


def fsmn_backward(g, x, back, ahead, mask=None):
    """Gradients of fsmn_forward w.r.t. x, back and ahead taps."""
    T = x.shape[1]
    s = x if mask is None else x * mask.astype(x.dtype)[:, :, None]
    taps = np.zeros_like(x)
    g_back = np.zeros_like(back)
    g_ahead = np.zeros_like(ahead)
    for i in range(back.shape[0]):
        taps[:, : T - i, :] += back[i] * g[:, i:, :]
        g_back[i] = (g[:, i:, :] * s[:, : T - i, :]).sum(axis=(0, 1))
    for j in range(1, ahead.shape[0] + 1):
        taps[:, j:, :] += ahead[j - 1] * g[:, : T - j, :]
        g_ahead[j - 1] = (g[:, : T - j, :] * s[:, j:, :]).sum(axis=(0, 1))
    if mask is not None:
        taps *= mask.astype(x.dtype)[:, :, None]
    return g + taps, g_back, g_ahead
