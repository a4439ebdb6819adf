"""Causal decoder-only transformer mapping token ids to next-token logits.

Blocks use pre-layer-norm ordering (norm -> attention -> residual, then
norm -> feed-forward -> residual) with a final layer norm, learned absolute
position embeddings, GELU feed-forward, and an output head tied to the
token embedding. A forward pass handles one unbatched sequence; batching
happens in the training loop via gradient accumulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-5

# additive attention mask value; exp(x - max) underflows to exactly 0.0 for
# any realistic score magnitude, which is what makes causality bit-exact
_MASK_VALUE = -1e30


class ConfigError(ValueError):
    """Model configuration violates an invariant."""


class LengthError(ValueError):
    """Input sequence is empty or longer than max_seq_len."""


class VocabularyError(ValueError):
    """A token id falls outside the configured vocabulary."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    dropout_rate: float = 0.1

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be at least 2, got {self.max_seq_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def toy_config(vocab_size: int = 2000, max_seq_len: int = 256, dropout_rate: float = 0.1) -> ModelConfig:
    """Default preset for all automated runs; trainable in minutes on a CPU."""
    return ModelConfig(
        n_layers=2,
        n_heads=2,
        d_model=64,
        d_ff=256,
        vocab_size=vocab_size,
        max_seq_len=max_seq_len,
        dropout_rate=dropout_rate,
    )


def small_config() -> ModelConfig:
    # 12-decoder variant; d_model/n_heads are conventional placeholders
    return ModelConfig(
        n_layers=12, n_heads=12, d_model=768, d_ff=3072, vocab_size=50257, max_seq_len=1024
    )


def large_config() -> ModelConfig:
    # 24-decoder variant; d_model/n_heads are conventional placeholders
    return ModelConfig(
        n_layers=24, n_heads=16, d_model=1024, d_ff=4096, vocab_size=50257, max_seq_len=1024
    )


PRESETS = {"toy": toy_config, "small": small_config, "large": large_config}


def _layer_tensor_shapes(cfg: ModelConfig, i: int) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    p = f"layers.{i}."
    return [
        (p + "ln1.gain", (d,)),
        (p + "ln1.bias", (d,)),
        (p + "attn.wq", (d, d)),
        (p + "attn.bq", (d,)),
        (p + "attn.wk", (d, d)),
        (p + "attn.bk", (d,)),
        (p + "attn.wv", (d, d)),
        (p + "attn.bv", (d,)),
        (p + "attn.wo", (d, d)),
        (p + "attn.bo", (d,)),
        (p + "ln2.gain", (d,)),
        (p + "ln2.bias", (d,)),
        (p + "ff.w1", (d, f)),
        (p + "ff.b1", (f,)),
        (p + "ff.w2", (f, d)),
        (p + "ff.b2", (d,)),
    ]


def tensor_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every named parameter tensor and its shape, in canonical order."""
    shapes = [
        ("token_embedding", (cfg.vocab_size, cfg.d_model)),
        ("position_embedding", (cfg.max_seq_len, cfg.d_model)),
    ]
    for i in range(cfg.n_layers):
        shapes.extend(_layer_tensor_shapes(cfg, i))
    shapes.append(("final_norm.gain", (cfg.d_model,)))
    shapes.append(("final_norm.bias", (cfg.d_model,)))
    return shapes


class DecoderWeights:
    """Named parameter set of the decoder. Immutable shape-wise after init;
    the training loop mutates values in place under exclusive access."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())


def init(config: ModelConfig, seed: int) -> DecoderWeights:
    """Seed-deterministic initialization: normal(0, 0.02) everywhere except
    layer-norm gains (exactly 1) and layer-norm biases (exactly 0)."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in tensor_shapes(config):
        if name.endswith(("ln1.gain", "ln2.gain", "final_norm.gain")):
            data = np.ones(shape)
        elif name.endswith(("ln1.bias", "ln2.bias", "final_norm.bias")):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return DecoderWeights(config, tensors)


def count_params(config: ModelConfig) -> int:
    """Exact scalar parameter count under weight tying."""
    d, f = config.d_model, config.d_ff
    per_layer = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d
    return (
        config.vocab_size * d
        + config.max_seq_len * d
        + config.n_layers * per_layer
        + 2 * d
    )


def _causal_mask(n_heads: int, L: int) -> Tensor:
    m = np.where(np.tril(np.ones((L, L))) > 0, 0.0, _MASK_VALUE)
    return Tensor(np.broadcast_to(m, (n_heads, L, L)).copy())


def forward(
    weights: DecoderWeights,
    tokens,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the decoder over one token-id sequence, returning [L x vocab] logits.

    Logits at position i depend only on tokens at positions <= i. Dropout is
    applied only when train_mode is true (and the config rate is nonzero),
    drawing masks from the supplied generator.
    """
    cfg = weights.config
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise LengthError(f"forward: expected a non-empty rank-1 id sequence, got shape {ids.shape}")
    L = ids.size
    if L > cfg.max_seq_len:
        raise LengthError(f"forward: sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise VocabularyError(
            f"forward: token ids must lie in [0, {cfg.vocab_size}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )
    drop = train_mode and cfg.dropout_rate > 0.0
    if drop and rng is None:
        raise ValueError("forward: train_mode with nonzero dropout requires an rng")

    w = weights.tensors
    H, hd = cfg.n_heads, cfg.head_dim
    att_scale = 1.0 / math.sqrt(hd)
    mask = _causal_mask(H, L)

    x = T.add(
        T.embedding_lookup(w["token_embedding"], ids),
        T.embedding_lookup(w["position_embedding"], np.arange(L)),
    )
    if drop:
        x = T.dropout(x, cfg.dropout_rate, rng)

    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = T.layer_norm(x, w[p + "ln1.gain"], w[p + "ln1.bias"], LN_EPS)

        def heads(m):  # [L x d] -> [H x L x hd]
            return T.transpose(T.reshape(m, (L, H, hd)), (1, 0, 2))

        q = heads(T.add(T.matmul(h, w[p + "attn.wq"]), w[p + "attn.bq"]))
        k = heads(T.add(T.matmul(h, w[p + "attn.wk"]), w[p + "attn.bk"]))
        v = heads(T.add(T.matmul(h, w[p + "attn.wv"]), w[p + "attn.bv"]))

        scores = T.add(T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), att_scale), mask)
        att = T.softmax_rows(scores)
        if drop:
            att = T.dropout(att, cfg.dropout_rate, rng)
        ctx = T.reshape(T.transpose(T.matmul(att, v), (1, 0, 2)), (L, cfg.d_model))
        out = T.add(T.matmul(ctx, w[p + "attn.wo"]), w[p + "attn.bo"])
        if drop:
            out = T.dropout(out, cfg.dropout_rate, rng)
        x = T.add(x, out)

        h2 = T.layer_norm(x, w[p + "ln2.gain"], w[p + "ln2.bias"], LN_EPS)
        f = T.add(T.matmul(T.gelu(T.add(T.matmul(h2, w[p + "ff.w1"]), w[p + "ff.b1"])), w[p + "ff.w2"]), w[p + "ff.b2"])
        if drop:
            f = T.dropout(f, cfg.dropout_rate, rng)
        x = T.add(x, f)

    x = T.layer_norm(x, w["final_norm.gain"], w["final_norm.bias"], LN_EPS)
    # weight-tied output head: logits = x @ token_embedding^T
    return T.matmul(x, T.transpose(w["token_embedding"]))
