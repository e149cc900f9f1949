"""Miniature encoder-decoder transformer for summarization.

Pre-norm layers, learned positional embeddings, a dedicated PAD id excluded
from attention and loss.  Checkpoints round-trip parameter values bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import PAD_ID, Vocabulary, as_token_batch
from .errors import CheckpointError, ConfigError, ShapeError
from .nn import Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 64
    max_positions: int = 64
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the reserved ids plus content")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if min(self.n_encoder_layers, self.n_decoder_layers, self.d_ff, self.max_positions) < 1:
            raise ConfigError("layer counts, d_ff and max_positions must be positive")


@dataclass
class HiddenStates:
    """A [batch, time, d] state tensor plus its padding mask (True = real)."""

    states: Tensor
    mask: np.ndarray

    @property
    def batch(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        return self.states.shape[1]

    def row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.norm_attn = LayerNorm(cfg.d_model, dtype)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm_ffn = LayerNorm(cfg.d_model, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, key_mask=mask)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.norm_self = LayerNorm(cfg.d_model, dtype)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm_cross = LayerNorm(cfg.d_model, dtype)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm_ffn = LayerNorm(cfg.d_model, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray, enc: HiddenStates) -> Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, h, key_mask=mask, causal=True)
        x = x + self.cross_attn(self.norm_cross(x), enc.states, enc.states, key_mask=enc.mask)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class Seq2SeqTransformer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.token_emb = Embedding(cfg.vocab_size, cfg.d_model, rng, dtype)
        self.pos_emb = Embedding(cfg.max_positions, cfg.d_model, rng, dtype)
        self.encoder_layers = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.n_encoder_layers)]
        self.encoder_norm = LayerNorm(cfg.d_model, dtype)
        self.decoder_layers = [DecoderLayer(cfg, rng, dtype) for _ in range(cfg.n_decoder_layers)]
        self.decoder_norm = LayerNorm(cfg.d_model, dtype)
        if not cfg.tie_embeddings:
            self.output_proj = Linear(cfg.d_model, cfg.vocab_size, rng, dtype)
        else:
            self.output_bias = Tensor(np.zeros(cfg.vocab_size, dtype=dtype), requires_grad=True)
        self.config = cfg
        self._dtype = dtype

    # reflection helpers skip non-parameter attributes automatically

    def _embed(self, ids: np.ndarray) -> Tensor:
        t = ids.shape[1]
        if t > self.config.max_positions:
            raise ShapeError(
                f"sequence length {t} exceeds max_positions {self.config.max_positions}; truncate before encoding"
            )
        return self.token_emb(ids) + self.pos_emb(np.arange(t))

    def encode(self, x) -> HiddenStates:
        """Map token ids to one hidden row per token (sentinels included)."""
        ids, mask = as_token_batch(x)
        h = self._embed(ids)
        for layer in self.encoder_layers:
            h = layer(h, mask)
        return HiddenStates(self.encoder_norm(h), mask)

    def decode_prefix(self, ids: np.ndarray, mask: np.ndarray, enc: HiddenStates) -> HiddenStates:
        """Decoder states for explicit input tokens; row t sees inputs <= t."""
        if enc.batch != ids.shape[0]:
            raise ShapeError(f"decoder batch {ids.shape[0]} != encoder batch {enc.batch}")
        h = self._embed(ids)
        for layer in self.decoder_layers:
            h = layer(h, mask, enc)
        return HiddenStates(self.decoder_norm(h), mask)

    def decode_states(self, y, enc: HiddenStates) -> HiddenStates:
        """All decoder states for a full target sequence, computed in parallel.

        For a sequence of L tokens this returns L-1 rows: row t is produced
        from tokens 0..t-1 and predicts token t.
        """
        y_ids, y_mask = as_token_batch(y)
        out = self.decode_prefix(y_ids[:, :-1], y_mask[:, :-1], enc)
        return HiddenStates(out.states, y_mask[:, 1:])

    def output_logits(self, states: Tensor) -> Tensor:
        if self.config.tie_embeddings:
            return T.matmul(states, T.transpose(self.token_emb.weight, (1, 0))) + self.output_bias
        return self.output_proj(states)

    def token_distribution(self, states: Tensor) -> Tensor:
        """Probability over the vocabulary for each state row; rows sum to 1."""
        return T.softmax(self.output_logits(states), axis=-1)


def nll_loss(model: Seq2SeqTransformer, x, y, smoothing: float = 0.0) -> Tensor:
    """Label-smoothed negative log-likelihood averaged per example, then batch.

    Per target position: (1-eps) * (-log p(target)) + eps * mean_v(-log p(v)).
    Padding positions are excluded; each example contributes the mean over its
    own real target positions.
    """
    return nll_from_encoded(model, model.encode(x), y, smoothing)


def nll_from_encoded(model: Seq2SeqTransformer, enc: HiddenStates, y, smoothing: float = 0.0) -> Tensor:
    """NLL against an already-encoded source (lets callers share the encoder run)."""
    y_ids, y_mask = as_token_batch(y)
    dec = model.decode_prefix(y_ids[:, :-1], y_mask[:, :-1], enc)
    logits = model.output_logits(dec.states)
    logp = T.log_softmax(logits, axis=-1)
    return label_smoothed_nll(logp, y_ids[:, 1:], y_mask[:, 1:], smoothing)


def label_smoothed_nll(logp: Tensor, targets: np.ndarray, mask: np.ndarray, smoothing: float) -> Tensor:
    """Mean over real target positions, per example, then over the batch.

    logp: [B, U, V] log-probabilities; targets: [B, U] ids; mask: [B, U].
    """
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"label smoothing must lie in [0, 1), got {smoothing}")
    picked = T.take_along_last(logp, targets)
    if smoothing == 0.0:
        per_pos = -picked
    else:
        per_pos = (1.0 - smoothing) * -picked + smoothing * -T.tmean(logp, axis=-1)
    weights = mask.astype(logp.data.dtype)
    counts = weights.sum(axis=1)
    per_example = T.tsum(per_pos * weights, axis=1) * Tensor(1.0 / counts)
    return T.tmean(per_example)


# ----- checkpoints ----------------------------------------------------------

CHECKPOINT_VERSION = 1
_PARAM_PREFIX = "param::"


def save_checkpoint(path: str | Path, model: Seq2SeqTransformer, vocab: Vocabulary, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "dtype": np.dtype(model._dtype).name,
        "vocab": vocab.tokens,
        "extra": extra or {},
    }
    arrays = {_PARAM_PREFIX + name: arr for name, arr in model.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqTransformer, Vocabulary, dict]:
    try:
        bundle = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if "__meta__" not in bundle:
        raise CheckpointError(f"checkpoint {path} lacks its metadata record")
    meta = json.loads(bytes(bundle["__meta__"]).decode("utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    cfg = ModelConfig(**meta["model_config"])
    model = Seq2SeqTransformer(cfg, np.random.default_rng(0), dtype=np.dtype(meta["dtype"]))
    state = {k[len(_PARAM_PREFIX):]: bundle[k] for k in bundle.files if k.startswith(_PARAM_PREFIX)}
    model.load_state(state)
    vocab = Vocabulary(meta["vocab"])
    return model, vocab, meta
