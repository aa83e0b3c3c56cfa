"""FSMN memory block: a learnable FIR-like filter over a sequence.

Each position receives its own vector plus elementwise-weighted copies
of up to N1 past and N2 future positions:

    out_t = x_t + sum_{i=0..N1} back[i] * x_{t-i} + sum_{j=1..N2} ahead[j-1] * x_{t+j}

Out-of-range and mask-invalid source positions contribute zero.  The
look-back side carries N1+1 tap vectors because the i=0 tap is a
learnable weight on the current position, separate from the unlearned
identity term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import DimensionError, Tensor, _apply


@dataclass
class FsmnCoefficients:
    """Learnable look-back / look-ahead tap vectors.

    back_taps has shape (N1+1, dim) holding taps for offsets 0..N1 into
    the past; ahead_taps has shape (N2, dim) for offsets 1..N2 into the
    future.  Taps weight their source position elementwise.
    """

    back_taps: Tensor
    ahead_taps: Tensor

    @property
    def look_back_order(self) -> int:
        return self.back_taps.shape[0] - 1

    @property
    def look_ahead_order(self) -> int:
        return self.ahead_taps.shape[0]

    @property
    def dim(self) -> int:
        return self.back_taps.shape[1]

    @classmethod
    def create(cls, n1: int, n2: int, dim: int, rng: np.random.Generator, dtype=np.float32) -> "FsmnCoefficients":
        """Taps uniform in ±1/sqrt(N1+1+N2), independent per element."""
        bound = 1.0 / np.sqrt(n1 + 1 + n2)
        back = rng.uniform(-bound, bound, size=(n1 + 1, dim)).astype(dtype)
        ahead = rng.uniform(-bound, bound, size=(n2, dim)).astype(dtype)
        return cls(Tensor(back, requires_grad=True), Tensor(ahead, requires_grad=True))

    @classmethod
    def zeros(cls, n1: int, n2: int, dim: int, dtype=np.float32) -> "FsmnCoefficients":
        return cls(
            Tensor(np.zeros((n1 + 1, dim), dtype=dtype), requires_grad=True),
            Tensor(np.zeros((n2, dim), dtype=dtype), requires_grad=True),
        )


def fsmn_apply(x: Tensor, coeffs: FsmnCoefficients, mask: np.ndarray | None = None) -> Tensor:
    """Apply the memory block along the time axis of x.

    x: (T, dim) or (B, T, dim); mask: matching (T,) or (B, T) validity
    flags, or None for all-valid.  Gradients flow to x and to all taps.
    """
    if x.shape[-1] != coeffs.dim:
        raise DimensionError(f"input dim {x.shape[-1]} != coefficient dim {coeffs.dim}")
    if x.ndim not in (2, 3):
        raise DimensionError(f"fsmn_apply expects (T, d) or (B, T, d), got {x.shape}")
    batched = x.ndim == 3
    xd = np.ascontiguousarray(x.data if batched else x.data[None])
    m = None
    if mask is not None:
        m = np.ascontiguousarray(np.asarray(mask, dtype=np.uint8))
        if not batched:
            m = m[None]
        if m.shape != xd.shape[:2]:
            raise DimensionError(f"mask shape {m.shape} does not match sequence {xd.shape[:2]}")

    back, ahead = coeffs.back_taps, coeffs.ahead_taps
    out = kernels.fsmn_forward(xd, back.data, ahead.data, m)

    def vjp(g):
        gb = np.ascontiguousarray(g if batched else g[None])
        gx, g_back, g_ahead = kernels.fsmn_backward(gb, xd, back.data, ahead.data, m)
        return (gx if batched else gx[0]), g_back, g_ahead

    return _apply("fsmn", out if batched else out[0], (x, back, ahead), vjp)


def fsmn_param_count(coeffs: FsmnCoefficients) -> int:
    """Learnable tap count of one block: (N1 + 1 + N2) * dim."""
    return coeffs.back_taps.size + coeffs.ahead_taps.size


def fsmn_tap_count(n1: int, n2: int, dim: int) -> int:
    """Tap count from orders alone, without instantiating coefficients."""
    return (n1 + 1 + n2) * dim
