"""Hybrid multi-head attention.

Half the heads are scaled dot-product attention over projected
query/key/value; the other half are convolutional word-context heads: a
depthwise causal dilated convolution with softmax-normalized kernel
columns builds local context, an adaptive softmax-weighted summary of the
projected sequence acts as a context query, and a per-position sigmoid
gate scores each local representation against that context. Head outputs
are concatenated (dot-product heads first) and linearly recombined.

Also hosts the per-layer complexity model backing the benchmark command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .tensor import (
    Tensor,
    concat,
    depthwise_causal_dilated_conv1d,
    drop_connect,
    dropout,
    masked_fill,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    transpose_last,
    tsum,
)


# ------------------------------------------------------------------ types


@dataclass
class SelfHeadParams:
    """Per-head query/key/value projections for a dot-product head."""

    w_q: Tensor  # (d, d_k)
    w_k: Tensor  # (d, d_k)
    w_v: Tensor  # (d, d_v)


@dataclass
class ConvHeadParams:
    """Parameters of one convolutional word-context head.

    w_in projects the model width down to the head width; w_a holds the
    (pre-softmax) kernel weights over the temporal window; w_s and w_q
    build the adaptive context query.
    """

    w_in: Tensor  # (d, d_h)
    w_a: Tensor  # (F, d_h), softmax-normalized along F at use time
    w_s: Tensor  # (d_h, d_h)
    w_q: Tensor  # (d_h,)
    dilation: int = 1

    def __post_init__(self):
        taps = self.w_a.shape[0]
        if taps < 1 or taps % 2 == 0:
            raise ConfigError(f"conv head kernel size must be odd and >= 1, got {taps}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")


@dataclass
class MultiHeadParams:
    """Hybrid head bundle: H/2 dot-product heads, H/2 conv heads, output mix."""

    h_total: int
    self_heads: list
    conv_heads: list
    w_o: Tensor  # (d, d)

    def __post_init__(self):
        if self.h_total % 2 != 0 or self.h_total < 2:
            raise ConfigError(f"head count must be even and >= 2, got {self.h_total}")
        half = self.h_total // 2
        if len(self.self_heads) != half or len(self.conv_heads) != half:
            raise ConfigError(
                f"need exactly {half} heads of each family, got "
                f"{len(self.self_heads)} dot-product and {len(self.conv_heads)} conv"
            )


def causal_mask(t_len: int) -> np.ndarray:
    """Boolean (T, T) mask, True where attending is allowed (s <= t)."""
    return np.tril(np.ones((t_len, t_len), dtype=bool))


# ---------------------------------------------------------------- Eq. (1)


def scaled_dot_product_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray] = None,
    attn_dropout=None,
) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with optional boolean keep-mask.

    Forbidden positions get exactly zero weight; a row with no allowed
    position is rejected. `attn_dropout` is an optional (p, rng) pair
    applied to the attention weights during training.
    """
    d_k = q.shape[-1]
    if k.shape[-1] != d_k:
        raise DimensionError(f"query width {d_k} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"key length {k.shape[-2]} != value length {v.shape[-2]}"
        )
    scores = mul(matmul(q, transpose_last(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise DimensionError(
                f"mask shape {mask.shape} != ({q.shape[-2]}, {k.shape[-2]})"
            )
        if (~mask).all(axis=-1).any():
            row = int(np.argwhere((~mask).all(axis=-1))[0][0])
            raise DataError(f"attention row {row} has no allowed position to attend")
        scores = masked_fill(scores, mask, -np.inf)
    weights = softmax(scores, axis=-1)
    if attn_dropout is not None:
        p, rng = attn_dropout
        weights = dropout(weights, p, rng, training=True)
    return matmul(weights, v)


# ---------------------------------------------------------------- Eq. (2)


def local_conv(s: Tensor, params: ConvHeadParams, kernel_dropconnect=None) -> Tensor:
    """Depthwise causal dilated convolution with a softmax-normalized kernel.

    Each kernel column is a probability distribution over the temporal
    window, so every output element is a convex combination of the current
    and past inputs of its channel (zero-padded on the left).
    `kernel_dropconnect` is an optional (p, rng) pair zeroing kernel taps
    during training.
    """
    kernel = softmax(params.w_a, axis=0)
    if kernel_dropconnect is not None:
        p, rng = kernel_dropconnect
        kernel = drop_connect(kernel, p, rng, training=True)
    return depthwise_causal_dilated_conv1d(s, kernel, params.dilation)


# ---------------------------------------------------------------- Eq. (3)


def adaptive_query(s: Tensor, params: ConvHeadParams, causal: bool = False) -> Tensor:
    """Softmax-weighted summary of the projected sequence.

    Full mode returns one context vector (..., d_h): positions are scored
    by s @ w_q, softmaxed over the sequence, and used to mix s @ w_s.
    Causal mode restricts each position's softmax to the prefix ending at
    it and returns one query per position (..., T, d_h), which is what the
    decoder needs to avoid reading future tokens.
    """
    proj = matmul(s, params.w_s)  # (..., T, d_h)
    d_h = params.w_s.shape[-1]
    scores = matmul(s, reshape(params.w_q, (d_h, 1)))  # (..., T, 1)
    if not causal:
        weights = softmax(scores, axis=-2)
        return tsum(mul(proj, weights), axis=-2)  # (..., d_h)
    t_len = s.shape[-2]
    rows = transpose_last(scores)  # (..., 1, T)
    masked = masked_fill(rows, causal_mask(t_len), -np.inf)  # (..., T, T)
    weights = softmax(masked, axis=-1)
    return matmul(weights, proj)  # (..., T, d_h)


# ---------------------------------------------------------------- Eq. (4)


def dynamic_conv_head(
    s_proj: Tensor,
    params: ConvHeadParams,
    causal_query: bool = False,
    kernel_dropconnect=None,
    capture: Optional[dict] = None,
) -> Tensor:
    """Gate local-context features by their relevance to the context query.

    score_t = <local_t, query_t> / sqrt(d_h) collapses each position to a
    scalar word-context relevance; the head output sigmoid(score_t) *
    local_t keeps the local representation as the value carrier so the
    head still emits (..., T, d_h) for concatenation.
    """
    d_h = s_proj.shape[-1]
    local = local_conv(s_proj, params, kernel_dropconnect)
    if capture is not None:
        capture["conv_local"] = local.data
    query = adaptive_query(s_proj, params, causal=causal_query)
    if not causal_query:
        query = reshape(query, query.shape[:-1] + (1, d_h))  # broadcast over T
    score = mul(tsum(mul(local, query), axis=-1, keepdims=True), 1.0 / math.sqrt(d_h))
    return mul(sigmoid(score), local)


# ---------------------------------------------------------------- Eq. (5)


def multi_head_forward(
    query_seq: Tensor,
    key_seq: Tensor,
    params: MultiHeadParams,
    mask: Optional[np.ndarray] = None,
    causal_conv: bool = False,
    attn_dropout=None,
    kernel_dropconnect=None,
    capture: Optional[dict] = None,
) -> Tensor:
    """Hybrid multi-head layer: H/2 dot-product heads on (query_seq,
    key_seq), H/2 conv word-context heads on query_seq, concatenated
    (dot-product heads first) and mixed by the output matrix.
    """
    d_model = params.w_o.shape[0]
    head_widths = sum(hp.w_v.shape[-1] for hp in params.self_heads) + sum(
        cp.w_in.shape[-1] for cp in params.conv_heads
    )
    if head_widths != d_model:
        raise DimensionError(
            f"concatenated head width {head_widths} != model width {d_model}"
        )
    outs = []
    for j, hp in enumerate(params.self_heads):
        q = matmul(query_seq, hp.w_q)
        k = matmul(key_seq, hp.w_k)
        v = matmul(key_seq, hp.w_v)
        out = scaled_dot_product_attention(q, k, v, mask, attn_dropout)
        if capture is not None and j == 0:
            capture["self_head"] = out.data
        outs.append(out)
    for j, cp in enumerate(params.conv_heads):
        s_proj = matmul(query_seq, cp.w_in)
        outs.append(
            dynamic_conv_head(
                s_proj,
                cp,
                causal_query=causal_conv,
                kernel_dropconnect=kernel_dropconnect,
                capture=capture if j == 0 else None,
            )
        )
    return matmul(concat(outs, axis=-1), params.w_o)


# ------------------------------------------------------ Table of complexities


LAYER_TYPES = (
    "self_attention",
    "recurrent",
    "convolution",
    "depthwise_separable_convolution",
)


@dataclass
class ComplexityEstimate:
    per_layer_ops: int
    sequential_ops: int
    max_path_length: int


def complexity_estimate(layer_type: str, n: int, d: int, f: int = 1) -> ComplexityEstimate:
    """Leading-term op counts per layer type.

    Per-layer ops: n^2*d (self-attention), n*d^2 (recurrent), f*n*d^2
    (convolution), f*n*d (depthwise separable convolution). Sequential ops
    and maximum path length follow the same table; the logarithmic path
    rows need a kernel size of at least 2.
    """
    if layer_type not in LAYER_TYPES:
        raise ConfigError(f"unknown layer type {layer_type!r}; expected one of {LAYER_TYPES}")
    if n < 1 or d < 1 or f < 1:
        raise ConfigError(f"n, d, f must be >= 1, got n={n} d={d} f={f}")
    if layer_type == "self_attention":
        return ComplexityEstimate(n * n * d, 1, 1)
    if layer_type == "recurrent":
        return ComplexityEstimate(n * d * d, n, n)
    if f < 2:
        raise ConfigError(
            f"{layer_type} path length is log base f; needs f >= 2, got {f}"
        )
    path = max(1, math.ceil(math.log(n) / math.log(f))) if n > 1 else 1
    if layer_type == "convolution":
        return ComplexityEstimate(f * n * d * d, 1, path)
    return ComplexityEstimate(f * n * d, 1, path)
