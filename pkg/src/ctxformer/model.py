"""Encoder-decoder assembly around the hybrid attention layers.

The encoder stack opens with two "base" layers carrying auxiliary
linear+softmax tag heads (part-of-speech on the first, named-entity on the
second) for multi-task training, followed by at least one standard layer.
The decoder mirrors the stack with masked hybrid self-attention and
encoder-decoder attention. Residual connections are post-norm: the
sublayer output is dropped out, added to the input, then layer-normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tn
from .attention import (
    ConvHeadParams,
    MultiHeadParams,
    SelfHeadParams,
    causal_mask,
    dynamic_conv_head,
    multi_head_forward,
    scaled_dot_product_attention,
)
from .errors import ConfigError, DataError
from .tensor import Tensor

LAYER_NORM_EPS = 1e-5
FFN_MULTIPLE = 4


# ------------------------------------------------------------------ config


@dataclass
class ModelConfig:
    d_model: int = 64
    h: int = 8
    n_blocks: int = 3
    kernel_sizes: tuple = (3, 5, 7)
    vocab_src: int = 64
    vocab_tgt: int = 64
    n_pos_tags: int = 6
    n_ner_tags: int = 3
    dropout: float = 0.0
    residual_dropout: float = 0.0
    embed_dropout: float = 0.0
    dropconnect: float = 0.0
    max_len: int = 64
    dilations: Optional[tuple] = None
    cross_conv: str = "memory"  # "memory" = hybrid cross-attention, "off" = all dot-product

    def validate(self) -> None:
        if self.n_blocks < 3:
            raise ConfigError(
                f"need at least 3 blocks (2 base + 1 standard), got {self.n_blocks}"
            )
        if len(self.kernel_sizes) != self.n_blocks:
            raise ConfigError(
                f"kernel_sizes has {len(self.kernel_sizes)} entries for "
                f"{self.n_blocks} blocks"
            )
        if self.h < 2 or self.h % 2 != 0:
            raise ConfigError(f"head count must be even and >= 2, got {self.h}")
        if self.d_model % self.h != 0:
            raise ConfigError(
                f"model width {self.d_model} not divisible by head count {self.h}"
            )
        for f in self.kernel_sizes:
            if f < 1 or f % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and >= 1, got {f}")
        for name in ("dropout", "residual_dropout", "embed_dropout", "dropconnect"):
            p = getattr(self, name)
            if not (0.0 <= p < 1.0):
                raise ConfigError(f"{name} must be in [0, 1), got {p}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be positive, got {self.max_len}")
        if self.dilations is not None and len(self.dilations) != self.n_blocks:
            raise ConfigError(
                f"dilations has {len(self.dilations)} entries for {self.n_blocks} blocks"
            )
        if self.cross_conv not in ("memory", "off"):
            raise ConfigError(f"cross_conv must be 'memory' or 'off', got {self.cross_conv!r}")
        for name in ("vocab_src", "vocab_tgt"):
            if getattr(self, name) < 5:
                raise ConfigError(f"{name} must cover the 4 reserved ids plus content")
        if self.n_pos_tags < 1 or self.n_ner_tags < 1:
            raise ConfigError("tag inventories must be nonempty")

    def block_dilation(self, i: int) -> int:
        return 1 if self.dilations is None else self.dilations[i]


@dataclass
class EncoderOutput:
    memory: Tensor  # (..., T_src, d)
    pos_logits: Tensor  # (..., T_src, n_pos_tags), from base layer 1
    ner_logits: Tensor  # (..., T_src, n_ner_tags), from base layer 2


# -------------------------------------------------------------- positions


def sinusoidal_positions(t_len: int, d: int) -> np.ndarray:
    """Standard sine/cosine position table, values in [-1, 1]."""
    if d % 2 != 0:
        raise ConfigError(f"position encoding needs even width, got {d}")
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / d)
    pe = np.zeros((t_len, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


# ------------------------------------------------------------- layer params


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class EncoderLayerParams:
    mha: MultiHeadParams
    ln1: LayerNormParams
    ffn: FeedForwardParams
    ln2: LayerNormParams


@dataclass
class DecoderLayerParams:
    mha: MultiHeadParams  # masked hybrid self-attention
    ln1: LayerNormParams
    xmha: MultiHeadParams  # encoder-decoder attention (conv half optional)
    ln2: LayerNormParams
    ffn: FeedForwardParams
    ln3: LayerNormParams


@dataclass
class _Regularizers:
    """Dropout plumbing for one forward pass; inactive at inference."""

    attn: Optional[tuple] = None  # (p, rng) on attention weights
    hidden: Optional[tuple] = None  # (p, rng) on FFN activations
    residual: Optional[tuple] = None  # (p, rng) on sublayer outputs
    kernel: Optional[tuple] = None  # (p, rng) DropConnect on conv kernels

    @staticmethod
    def from_config(cfg: ModelConfig, training: bool, rng) -> "_Regularizers":
        if not training:
            return _Regularizers()
        if rng is None:
            raise ConfigError("training forward pass needs an rng for dropout")
        return _Regularizers(
            attn=(cfg.dropout, rng) if cfg.dropout > 0 else None,
            hidden=(cfg.dropout, rng) if cfg.dropout > 0 else None,
            residual=(cfg.residual_dropout, rng) if cfg.residual_dropout > 0 else None,
            kernel=(cfg.dropconnect, rng) if cfg.dropconnect > 0 else None,
        )


def _maybe_dropout(x: Tensor, pair) -> Tensor:
    if pair is None:
        return x
    p, rng = pair
    return tn.dropout(x, p, rng, training=True)


# ----------------------------------------------------------- layer forwards


def _feed_forward(x: Tensor, ffn: FeedForwardParams, reg: _Regularizers) -> Tensor:
    hidden = tn.relu(tn.add(tn.matmul(x, ffn.w1), ffn.b1))
    hidden = _maybe_dropout(hidden, reg.hidden)
    return tn.add(tn.matmul(hidden, ffn.w2), ffn.b2)


def _sublayer(x: Tensor, out: Tensor, ln: LayerNormParams, reg: _Regularizers) -> Tensor:
    return tn.layer_norm(
        tn.add(x, _maybe_dropout(out, reg.residual)), ln.gamma, ln.beta, LAYER_NORM_EPS
    )


def encoder_layer(
    x: Tensor,
    layer: EncoderLayerParams,
    reg: _Regularizers = _Regularizers(),
    capture: Optional[dict] = None,
) -> Tensor:
    attn = multi_head_forward(
        x,
        x,
        layer.mha,
        mask=None,
        causal_conv=False,
        attn_dropout=reg.attn,
        kernel_dropconnect=reg.kernel,
        capture=capture,
    )
    x = _sublayer(x, attn, layer.ln1, reg)
    return _sublayer(x, _feed_forward(x, layer.ffn, reg), layer.ln2, reg)


def base_encoder_layer(
    x: Tensor,
    layer: EncoderLayerParams,
    head_w: Tensor,
    head_b: Tensor,
    reg: _Regularizers = _Regularizers(),
    capture: Optional[dict] = None,
) -> tuple[Tensor, Tensor]:
    """Encoder layer plus the auxiliary tag logits computed from its output."""
    y = encoder_layer(x, layer, reg, capture)
    aux_logits = tn.add(tn.matmul(y, head_w), head_b)
    return y, aux_logits


def _cross_attention(
    y: Tensor, memory: Tensor, params: MultiHeadParams, reg: _Regularizers
) -> Tensor:
    """Encoder-decoder attention.

    Dot-product heads attend the memory from decoder queries. Conv heads
    (hybrid mode) read the memory through their input projection with the
    full-sequence context query, which is safe because the memory is fully
    observed; the gated features are mean-pooled over source positions and
    broadcast to every decoder position, so decoder causality is untouched.
    """
    t_q = y.shape[-2]
    outs = []
    for hp in params.self_heads:
        q = tn.matmul(y, hp.w_q)
        k = tn.matmul(memory, hp.w_k)
        v = tn.matmul(memory, hp.w_v)
        outs.append(scaled_dot_product_attention(q, k, v, None, reg.attn))
    for cp in params.conv_heads:
        gated = dynamic_conv_head(
            tn.matmul(memory, cp.w_in),
            cp,
            causal_query=False,
            kernel_dropconnect=reg.kernel,
        )
        pooled = tn.tmean(gated, axis=-2, keepdims=True)  # (..., 1, d_h)
        outs.append(tn.broadcast_to(pooled, pooled.shape[:-2] + (t_q, pooled.shape[-1])))
    return tn.matmul(tn.concat(outs, axis=-1), params.w_o)


def decoder_layer(
    y: Tensor,
    memory: Tensor,
    layer: DecoderLayerParams,
    reg: _Regularizers = _Regularizers(),
) -> Tensor:
    t_len = y.shape[-2]
    self_attn = multi_head_forward(
        y,
        y,
        layer.mha,
        mask=causal_mask(t_len),
        causal_conv=True,
        attn_dropout=reg.attn,
        kernel_dropconnect=reg.kernel,
    )
    y = _sublayer(y, self_attn, layer.ln1, reg)
    y = _sublayer(y, _cross_attention(y, memory, layer.xmha, reg), layer.ln2, reg)
    return _sublayer(y, _feed_forward(y, layer.ffn, reg), layer.ln3, reg)


# --------------------------------------------------------------- the model


class Seq2SeqModel:
    """Full translation model with auxiliary tag heads.

    Parameters live both in structured per-layer views and in a flat
    name -> Tensor map (the checkpoint naming convention); both alias the
    same Tensor objects.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng((seed, 0xC0FFEE))
        self._build()
        self._pe = sinusoidal_positions(config.max_len, config.d_model).astype(self.dtype)

    # -- construction ----------------------------------------------------

    def _param(self, name: str, shape, fan_in: Optional[int] = None) -> Tensor:
        if fan_in is None:  # zeros (biases, layer-norm shifts)
            data = np.zeros(shape, dtype=self.dtype)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            data = self._rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _ones(self, name: str, shape) -> Tensor:
        t = Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _self_head(self, prefix: str, d: int, d_k: int) -> SelfHeadParams:
        return SelfHeadParams(
            w_q=self._param(f"{prefix}.q", (d, d_k), d),
            w_k=self._param(f"{prefix}.k", (d, d_k), d),
            w_v=self._param(f"{prefix}.v", (d, d_k), d),
        )

    def _conv_head(self, prefix: str, d: int, d_h: int, taps: int, dilation: int) -> ConvHeadParams:
        return ConvHeadParams(
            w_in=self._param(f"{prefix}.w_in", (d, d_h), d),
            w_a=self._param(f"{prefix}.w_a", (taps, d_h), taps),
            w_s=self._param(f"{prefix}.w_s", (d_h, d_h), d_h),
            w_q=self._param(f"{prefix}.w_q", (d_h,), d_h),
            dilation=dilation,
        )

    def _hybrid_mha(self, prefix: str, taps: int, dilation: int) -> MultiHeadParams:
        cfg = self.config
        d, h = cfg.d_model, cfg.h
        d_h = d // h
        return MultiHeadParams(
            h_total=h,
            self_heads=[self._self_head(f"{prefix}.self.{j}", d, d_h) for j in range(h // 2)],
            conv_heads=[
                self._conv_head(f"{prefix}.conv.{j}", d, d_h, taps, dilation)
                for j in range(h // 2)
            ],
            w_o=self._param(f"{prefix}.w_o", (d, d), d),
        )

    def _all_self_mha(self, prefix: str) -> MultiHeadParams:
        # cross_conv="off" fallback: every cross-attention head is dot-product.
        cfg = self.config
        d, h = cfg.d_model, cfg.h
        d_h = d // h
        params = MultiHeadParams.__new__(MultiHeadParams)
        params.h_total = h
        params.self_heads = [
            self._self_head(f"{prefix}.self.{j}", d, d_h) for j in range(h)
        ]
        params.conv_heads = []
        params.w_o = self._param(f"{prefix}.w_o", (d, d), d)
        return params

    def _ffn(self, prefix: str) -> FeedForwardParams:
        d = self.config.d_model
        inner = FFN_MULTIPLE * d
        return FeedForwardParams(
            w1=self._param(f"{prefix}.w1", (d, inner), d),
            b1=self._param(f"{prefix}.b1", (inner,)),
            w2=self._param(f"{prefix}.w2", (inner, d), inner),
            b2=self._param(f"{prefix}.b2", (d,)),
        )

    def _ln(self, prefix: str) -> LayerNormParams:
        d = self.config.d_model
        return LayerNormParams(
            gamma=self._ones(f"{prefix}.gamma", (d,)),
            beta=self._param(f"{prefix}.beta", (d,)),
        )

    def _build(self) -> None:
        cfg = self.config
        d = cfg.d_model
        self.src_embed = self._param("src_embed", (cfg.vocab_src, d), d)
        self.tgt_embed = self._param("tgt_embed", (cfg.vocab_tgt, d), d)
        self.enc_layers = []
        for i in range(cfg.n_blocks):
            taps, dil = cfg.kernel_sizes[i], cfg.block_dilation(i)
            self.enc_layers.append(
                EncoderLayerParams(
                    mha=self._hybrid_mha(f"enc.{i}.mha", taps, dil),
                    ln1=self._ln(f"enc.{i}.ln1"),
                    ffn=self._ffn(f"enc.{i}.ffn"),
                    ln2=self._ln(f"enc.{i}.ln2"),
                )
            )
        self.pos_head_w = self._param("pos_head.w", (d, cfg.n_pos_tags), d)
        self.pos_head_b = self._param("pos_head.b", (cfg.n_pos_tags,))
        self.ner_head_w = self._param("ner_head.w", (d, cfg.n_ner_tags), d)
        self.ner_head_b = self._param("ner_head.b", (cfg.n_ner_tags,))
        self.dec_layers = []
        for i in range(cfg.n_blocks):
            taps, dil = cfg.kernel_sizes[i], cfg.block_dilation(i)
            if cfg.cross_conv == "memory":
                xmha = self._hybrid_mha(f"dec.{i}.xmha", taps, dil)
            else:
                xmha = self._all_self_mha(f"dec.{i}.xmha")
            self.dec_layers.append(
                DecoderLayerParams(
                    mha=self._hybrid_mha(f"dec.{i}.mha", taps, dil),
                    ln1=self._ln(f"dec.{i}.ln1"),
                    xmha=xmha,
                    ln2=self._ln(f"dec.{i}.ln2"),
                    ffn=self._ffn(f"dec.{i}.ffn"),
                    ln3=self._ln(f"dec.{i}.ln3"),
                )
            )
        self.out_proj_w = self._param("out_proj.w", (d, cfg.vocab_tgt), d)
        self.out_proj_b = self._param("out_proj.b", (cfg.vocab_tgt,))

    # -- forward ----------------------------------------------------------

    def _check_length(self, ids: np.ndarray, what: str) -> None:
        t_len = ids.shape[-1]
        if t_len > self.config.max_len:
            raise DataError(
                f"{what} length {t_len} exceeds max_len {self.config.max_len}"
            )
        if t_len == 0:
            raise DataError(f"{what} is empty")

    def embed(
        self,
        ids: np.ndarray,
        table: Tensor,
        training: bool = False,
        rng=None,
    ) -> Tensor:
        """Token lookup scaled by sqrt(d) plus positions, then embed dropout."""
        ids = np.asarray(ids)
        t_len = ids.shape[-1]
        x = tn.mul(tn.embedding(table, ids), math.sqrt(self.config.d_model))
        x = tn.add(x, self._pe[:t_len])
        if training and self.config.embed_dropout > 0:
            x = tn.dropout(x, self.config.embed_dropout, rng, training=True)
        return x

    def encode(
        self,
        src_ids: np.ndarray,
        training: bool = False,
        rng=None,
        capture: Optional[dict] = None,
    ) -> EncoderOutput:
        """Base layer 1 (POS head), base layer 2 (NER head), then the
        remaining standard layers; all three outputs share one pass."""
        src_ids = np.asarray(src_ids)
        self._check_length(src_ids, "source")
        reg = _Regularizers.from_config(self.config, training, rng)
        x = self.embed(src_ids, self.src_embed, training, rng)
        if capture is not None:
            capture["embedding"] = x.data
        x, pos_logits = base_encoder_layer(
            x, self.enc_layers[0], self.pos_head_w, self.pos_head_b, reg, capture
        )
        x, ner_logits = base_encoder_layer(
            x, self.enc_layers[1], self.ner_head_w, self.ner_head_b, reg
        )
        for layer in self.enc_layers[2:]:
            x = encoder_layer(x, layer, reg)
        return EncoderOutput(memory=x, pos_logits=pos_logits, ner_logits=ner_logits)

    def decode(
        self,
        tgt_in_ids: np.ndarray,
        memory: Tensor,
        training: bool = False,
        rng=None,
    ) -> Tensor:
        """Teacher-forced decoder pass; returns target-vocabulary logits."""
        tgt_in_ids = np.asarray(tgt_in_ids)
        self._check_length(tgt_in_ids, "target")
        reg = _Regularizers.from_config(self.config, training, rng)
        y = self.embed(tgt_in_ids, self.tgt_embed, training, rng)
        for layer in self.dec_layers:
            y = decoder_layer(y, memory, layer, reg)
        return tn.add(tn.matmul(y, self.out_proj_w), self.out_proj_b)

    def forward_train(
        self,
        src_ids: np.ndarray,
        tgt_in_ids: np.ndarray,
        training: bool = True,
        rng=None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Full teacher-forced pass: translation logits plus both tag logits."""
        enc = self.encode(src_ids, training, rng)
        mt_logits = self.decode(tgt_in_ids, enc.memory, training, rng)
        return mt_logits, enc.pos_logits, enc.ner_logits

    # -- parameter plumbing -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise DataError(
                f"checkpoint does not match model: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]}"
            )
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise DataError(
                    f"parameter {name}: checkpoint shape {arr.shape} != {t.data.shape}"
                )
            t.data = arr.copy()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count for a given configuration."""
    config.validate()
    d, h = config.d_model, config.h
    d_h = d // h
    inner = FFN_MULTIPLE * d

    def hybrid_mha(taps: int) -> int:
        self_part = (h // 2) * 3 * d * d_h
        conv_part = (h // 2) * (d * d_h + taps * d_h + d_h * d_h + d_h)
        return self_part + conv_part + d * d

    def all_self_mha() -> int:
        return h * 3 * d * d_h + d * d

    ffn = d * inner + inner + inner * d + d
    ln = 2 * d
    total = (config.vocab_src + config.vocab_tgt) * d
    for i in range(config.n_blocks):
        taps = config.kernel_sizes[i]
        total += hybrid_mha(taps) + ffn + 2 * ln  # encoder block
        cross = hybrid_mha(taps) if config.cross_conv == "memory" else all_self_mha()
        total += hybrid_mha(taps) + cross + ffn + 3 * ln  # decoder block
    total += d * config.n_pos_tags + config.n_pos_tags
    total += d * config.n_ner_tags + config.n_ner_tags
    total += d * config.vocab_tgt + config.vocab_tgt
    return total
