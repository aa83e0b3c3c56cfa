"""Multi-head scaled dot-product attention with two Q/K/V formation strategies.

SAN forms query, key and value by learned square projections of the
input.  SSAN forms query and key with two independent FSMN memory
blocks and passes the input through unchanged as value; only the output
projection matrix remains.  Cross-attention between decoder and encoder
is always SAN-style.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .fsmn import FsmnCoefficients, fsmn_apply, fsmn_tap_count
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    dropout,
    matmul,
    reshape,
    scale,
    softmax_lastdim,
    transpose,
)

MASK_BIAS = -1e9

SAN = "san"
SSAN = "ssan"


@dataclass
class AttentionConfig:
    d_model: int
    heads: int
    variant: str = SAN
    fsmn_orders: Optional[Tuple[int, int]] = None
    causal: bool = False

    def __post_init__(self):
        if self.variant not in (SAN, SSAN):
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.variant == SSAN:
            if self.fsmn_orders is None:
                raise ValueError("ssan variant requires fsmn_orders (N1, N2)")
            if self.causal and self.fsmn_orders[1] != 0:
                raise ValueError("causal ssan attention requires look-ahead order 0")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


@dataclass
class SanWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    @classmethod
    def create(cls, d_model: int, rng: np.random.Generator, dtype=np.float32) -> "SanWeights":
        def mat():
            bound = 1.0 / np.sqrt(d_model)
            return Tensor(rng.uniform(-bound, bound, size=(d_model, d_model)).astype(dtype), requires_grad=True)

        return cls(mat(), mat(), mat(), mat())


@dataclass
class SsanWeights:
    q_coeffs: FsmnCoefficients
    k_coeffs: FsmnCoefficients
    wo: Tensor

    @classmethod
    def create(cls, d_model: int, n1: int, n2: int, rng: np.random.Generator, dtype=np.float32) -> "SsanWeights":
        bound = 1.0 / np.sqrt(d_model)
        wo = Tensor(rng.uniform(-bound, bound, size=(d_model, d_model)).astype(dtype), requires_grad=True)
        return cls(
            FsmnCoefficients.create(n1, n2, d_model, rng, dtype),
            FsmnCoefficients.create(n1, n2, d_model, rng, dtype),
            wo,
        )


def _project(x: Tensor, w: Tensor) -> Tensor:
    # row-vector convention: out_t = W x_t  ==  x @ W^T
    return matmul(x, transpose(w, (1, 0)))


def form_qkv_san(x: Tensor, w: SanWeights) -> Tuple[Tensor, Tensor, Tensor]:
    """Position-wise projections: no context mixing."""
    return _project(x, w.wq), _project(x, w.wk), _project(x, w.wv)


def form_qkv_ssan(x: Tensor, w: SsanWeights, mask: np.ndarray | None = None) -> Tuple[Tensor, Tensor, Tensor]:
    """Memory-block query/key; value is the input itself."""
    q = fsmn_apply(x, w.q_coeffs, mask)
    k = fsmn_apply(x, w.k_coeffs, mask)
    return q, k, x


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    wo: Tensor,
    config: AttentionConfig,
    attn_mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over contiguous head chunks.

    attn_mask (bool, True = may attend) has shape (T_q, T_k) or
    (B, T_q, T_k); masked logits receive a -1e9 bias before softmax.
    Returns the projected output and a detached copy of the per-head
    attention matrices, (B,) h x T_q x T_k.
    """
    batched = q.ndim == 3
    if not batched:
        q, k, v = (reshape(t, (1,) + t.shape) for t in (q, k, v))
    b, tq, d = q.shape
    tk = k.shape[1]
    if d != config.d_model or k.shape[2] != d or v.shape[2] != d:
        raise DimensionError(f"attention inputs must have width {config.d_model}")

    qh = _split_heads(q, config.heads)
    kh = _split_heads(k, config.heads)
    vh = _split_heads(v, config.heads)

    logits = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(config.d_k))
    if attn_mask is not None:
        m = np.asarray(attn_mask, dtype=bool)
        if m.shape == (tq, tk):
            m = np.broadcast_to(m, (b, tq, tk))
        elif m.shape != (b, tq, tk):
            raise DimensionError(f"attn_mask shape {m.shape} incompatible with ({b}, {tq}, {tk})")
        if not m.any(axis=-1).all():
            raise ContractError("attention mask leaves a query row with no valid key")
        bias = np.where(m, 0.0, MASK_BIAS).astype(q.dtype)
        bias = np.broadcast_to(bias[:, None, :, :], (b, config.heads, tq, tk)).copy()
        logits = add(logits, Tensor(bias))

    alpha = softmax_lastdim(logits)
    attn = alpha.data.copy()
    alpha = dropout(alpha, dropout_rate, rng, training)
    ctx = _merge_heads(matmul(alpha, vh))
    out = _project(ctx, wo)
    if not batched:
        out = reshape(out, out.shape[1:])
        attn = attn[0]
    return out, attn


def cross_attention(
    decoder_x: Tensor,
    encoder_h: Tensor,
    w: SanWeights,
    config: AttentionConfig,
    attn_mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tuple[Tensor, np.ndarray]:
    """Decoder queries attend over encoder outputs (projection-formed K, V)."""
    q = _project(decoder_x, w.wq)
    k = _project(encoder_h, w.wk)
    v = _project(encoder_h, w.wv)
    return multi_head_attention(
        q, k, v, w.wo, config, attn_mask, dropout_rate=dropout_rate, rng=rng, training=training
    )


def attention_param_count(config: AttentionConfig) -> int:
    """Learnable weights of one attention sublayer (Q/K/V formation + W^O)."""
    d = config.d_model
    if config.variant == SAN:
        return 4 * d * d
    n1, n2 = config.fsmn_orders
    return d * d + 2 * fsmn_tap_count(n1, n2, d)
