"""Sequence-level contrastive objective with a momentum target network.

An online network (trainable) and a target network (EMA shadow, never
updated by gradients) each map sequences to hidden-state rows; a shared
cross-attention module re-indexes the online states onto the target side's
positions so per-position cosines can be averaged.  Losses are 1 - similarity,
symmetrized by swapping which network encodes which sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, Module, MultiHeadAttention
from .tensor import Tensor
from .transformer import HiddenStates, Seq2SeqTransformer, nll_from_encoded


@dataclass
class SeqCoConfig:
    """Loss weights and similarity-mode switches."""

    lambda_doc_gold: float = 0.0  # document vs gold summary, encoder mapping
    lambda_doc_gen: float = 0.0  # document vs generated summary, encoder mapping
    lambda_gold_gen: float = 0.0  # gold vs generated summary, encoder mapping
    lambda_gold_gen_dec: float = 0.0  # gold vs generated summary, decoder mapping
    tau: float = 0.99
    similarity_mode: str = "mha"  # "mha" or "cls"
    proj_hidden: int = 64
    align_heads: int = 4
    identity_projection: bool = False

    def __post_init__(self):
        self.similarity_mode = self.similarity_mode.lower()
        if self.similarity_mode not in ("mha", "cls"):
            raise ConfigError(f"similarity_mode must be 'mha' or 'cls', got {self.similarity_mode!r}")
        for name in ("lambda_doc_gold", "lambda_doc_gen", "lambda_gold_gen", "lambda_gold_gen_dec"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.proj_hidden < 1 or self.align_heads < 1:
            raise ConfigError("proj_hidden and align_heads must be positive")

    @property
    def active_lambdas(self) -> dict[str, float]:
        pairs = {
            "doc_gold": self.lambda_doc_gold,
            "doc_gen": self.lambda_doc_gen,
            "gold_gen": self.lambda_gold_gen,
            "gold_gen_dec": self.lambda_gold_gen_dec,
        }
        return {k: v for k, v in pairs.items() if v > 0}

    @property
    def needs_generated(self) -> bool:
        return self.lambda_doc_gen + self.lambda_gold_gen + self.lambda_gold_gen_dec > 0

    @property
    def any_active(self) -> bool:
        return bool(self.active_lambdas)


class ProjectionHead(Module):
    """One-hidden-layer ReLU net applied row-wise; optionally a pure bypass."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, dtype=np.float32, identity: bool = False):
        self.lift = Linear(d, hidden, rng, dtype)
        self.drop = Linear(hidden, d, rng, dtype)
        self._identity = identity
        self._dims = (d, hidden)

    def __call__(self, x: Tensor) -> Tensor:
        if self._identity:
            return x
        return self.drop(T.relu(self.lift(x)))


class OnlineNetwork(Module):
    """Trainable stack: the seq2seq model, projection head, alignment
    attention, and the predictor used by CLS-style similarity."""

    def __init__(self, model: Seq2SeqTransformer, cfg: SeqCoConfig, rng: np.random.Generator, dtype=np.float32):
        d = model.config.d_model
        self.model = model
        self.project = ProjectionHead(d, cfg.proj_hidden, rng, dtype, identity=cfg.identity_projection)
        self.align = MultiHeadAttention(d, cfg.align_heads, rng, dtype)
        self.predict = ProjectionHead(d, cfg.proj_hidden, rng, dtype, identity=cfg.identity_projection)
        self._dtype = dtype


class TargetNetwork(Module):
    """EMA shadow of the online model and projection head; never trained."""

    def __init__(self, model: Seq2SeqTransformer, project: ProjectionHead):
        self.model = model
        self.project = project
        self.set_requires_grad(False)

    @classmethod
    def from_online(cls, online: OnlineNetwork) -> "TargetNetwork":
        dummy = np.random.default_rng(0)
        model = Seq2SeqTransformer(online.model.config, dummy, dtype=online._dtype)
        model.load_state(online.model.state_dict())
        d, hidden = online.project._dims
        project = ProjectionHead(d, hidden, dummy, online._dtype, identity=online.project._identity)
        project.load_state(online.project.state_dict())
        return cls(model, project)


# ----- mapping functions ------------------------------------------------------


def map_encoder(s, net: OnlineNetwork | TargetNetwork) -> HiddenStates:
    """Project the encoder's states row-wise; one row per token."""
    enc = net.model.encode(s)
    return HiddenStates(net.project(enc.states), enc.mask)


def map_decoder(s, x, net: OnlineNetwork | TargetNetwork) -> HiddenStates:
    """Project decoder states of summary s conditioned on its document x."""
    enc = net.model.encode(x)
    dec = net.model.decode_states(s, enc)
    return HiddenStates(net.project(dec.states), dec.mask)


def align_states(h_i: HiddenStates, h_j: HiddenStates, attn: MultiHeadAttention) -> HiddenStates:
    """Re-index h_i onto h_j's positions: attention with h_j as the query."""
    out = attn(h_j.states, h_i.states, h_i.states, key_mask=h_i.mask)
    return HiddenStates(out, h_j.mask)


# ----- similarity -------------------------------------------------------------


def masked_mean_cosine(a: Tensor, b: Tensor, mask: np.ndarray, eps: float = 1e-8) -> Tensor:
    """Average cosine of paired rows, skipping masked positions.

    a, b: [B, T, d]; mask: [B, T] with True on rows that count.  Each batch
    element averages over its own row count; the result is the batch mean.
    """
    if a.shape != b.shape:
        raise ShapeError(f"row-paired tensors must match: {a.shape} vs {b.shape}")
    dot = T.tsum(a * b, axis=-1)
    na = T.sqrt(T.tsum(a * a, axis=-1))
    nb = T.sqrt(T.tsum(b * b, axis=-1))
    cos = T.clip(dot / (na * nb + eps), -1.0, 1.0)
    weights = mask.astype(a.data.dtype)
    counts = weights.sum(axis=1)
    if np.any(counts == 0):
        raise ShapeError("every batch element needs at least one unmasked row")
    per_example = T.tsum(cos * weights, axis=1) * Tensor(1.0 / counts)
    return T.tmean(per_example)


def _first_row_cosine_mean(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Batch-mean cosine of two [B, d] row sets."""
    dot = T.tsum(a * b, axis=-1)
    na = T.sqrt(T.tsum(a * a, axis=-1))
    nb = T.sqrt(T.tsum(b * b, axis=-1))
    return T.tmean(T.clip(dot / (na * nb + eps), -1.0, 1.0))


def _similarity_from_states(h_on: HiddenStates, h_tg: HiddenStates, online: OnlineNetwork, mode: str) -> Tensor:
    if mode == "mha":
        aligned = align_states(h_on, h_tg, online.align)
        return masked_mean_cosine(aligned.states, h_tg.states, h_tg.mask)
    projected = online.predict(h_on.states[:, 0, :])
    return _first_row_cosine_mean(projected, h_tg.states[:, 0, :])


class _StateCache:
    """Memoizes raw and projected hidden states within one combined-loss
    evaluation, so shared sub-computations (notably encoding the document)
    run once per network side."""

    def __init__(self, online: OnlineNetwork, target: TargetNetwork | None):
        self.online = online
        self.target = target
        self._raw: dict[tuple, HiddenStates] = {}
        self._mapped: dict[tuple, HiddenStates] = {}

    def _net(self, side: str):
        return self.online if side == "on" else self.target

    def seed_raw(self, side: str, key: str, enc: HiddenStates) -> None:
        self._raw[(side, key)] = enc

    def raw_encoder(self, side: str, key: str, seq) -> HiddenStates:
        k = (side, key)
        if k not in self._raw:
            self._raw[k] = self._net(side).model.encode(seq)
        return self._raw[k]

    def encoder(self, side: str, key: str, seq) -> HiddenStates:
        k = (side, "enc", key)
        if k not in self._mapped:
            raw = self.raw_encoder(side, key, seq)
            self._mapped[k] = HiddenStates(self._net(side).project(raw.states), raw.mask)
        return self._mapped[k]

    def decoder(self, side: str, key: str, seq, src_key: str, source) -> HiddenStates:
        k = (side, "dec", key)
        if k not in self._mapped:
            net = self._net(side)
            enc = self.raw_encoder(side, src_key, source)
            dec = net.model.decode_states(seq, enc)
            self._mapped[k] = HiddenStates(net.project(dec.states), dec.mask)
        return self._mapped[k]


def seq_similarity(
    s_i,
    s_j,
    online: OnlineNetwork,
    target: TargetNetwork,
    mode: str = "mha",
    mapping: str = "encoder",
    source=None,
) -> Tensor:
    """Similarity of s_i (online-encoded) against s_j (target-encoded).

    mha: align the online rows onto s_j's positions, then average the
    per-position cosines over s_j's real rows.  cls: cosine of the predicted
    first-position state against the target's first-position state.
    """
    if mapping == "encoder":
        h_on = map_encoder(s_i, online)
        h_tg = map_encoder(s_j, target)
    elif mapping == "decoder":
        if source is None:
            raise ConfigError("decoder-side similarity needs the source document")
        h_on = map_decoder(s_i, source, online)
        h_tg = map_decoder(s_j, source, target)
    else:
        raise ConfigError(f"unknown mapping {mapping!r}")
    return _similarity_from_states(h_on, h_tg, online, mode)


def directional_loss(
    s_i,
    s_j,
    online: OnlineNetwork,
    target: TargetNetwork,
    mode: str = "mha",
    mapping: str = "encoder",
    source=None,
) -> Tensor:
    """1 - similarity; gradients reach only the online network."""
    return 1.0 - seq_similarity(s_i, s_j, online, target, mode, mapping, source)


def symmetric_loss(
    s_i,
    s_j,
    online: OnlineNetwork,
    target: TargetNetwork,
    mode: str = "mha",
    mapping: str = "encoder",
    source=None,
) -> Tensor:
    """Sum of both directions; the second term online-encodes s_j instead."""
    forward = directional_loss(s_i, s_j, online, target, mode, mapping, source)
    reverse = directional_loss(s_j, s_i, online, target, mode, mapping, source)
    return forward + reverse


# ----- combined objective ------------------------------------------------------


@dataclass
class CombinedLoss:
    total: Tensor
    nll: float
    sim_terms: dict[str, float] = field(default_factory=dict)


def combined_loss(
    x,
    y,
    y_hat,
    online: OnlineNetwork,
    target: TargetNetwork | None,
    cfg: SeqCoConfig,
    smoothing: float = 0.0,
) -> CombinedLoss:
    """Token-level NLL plus the weighted similarity losses.

    Terms with a zero weight are skipped entirely, so an all-zero config
    computes exactly the plain NLL.  The generated summary is only required
    when one of its terms is active.
    """
    if cfg.needs_generated and y_hat is None:
        raise ConfigError("a generated summary is required while its loss weights are non-zero")
    if cfg.any_active and target is None:
        raise ConfigError("similarity losses need a target network")

    enc_x = online.model.encode(x)
    total = nll_from_encoded(online.model, enc_x, y, smoothing)
    result = CombinedLoss(total=total, nll=float(total.data))
    if not cfg.any_active:
        return result

    cache = _StateCache(online, target)
    cache.seed_raw("on", "x", enc_x)
    mode = cfg.similarity_mode

    def sym_encoder(key_i, seq_i, key_j, seq_j) -> Tensor:
        fwd = 1.0 - _similarity_from_states(
            cache.encoder("on", key_i, seq_i), cache.encoder("tg", key_j, seq_j), online, mode
        )
        rev = 1.0 - _similarity_from_states(
            cache.encoder("on", key_j, seq_j), cache.encoder("tg", key_i, seq_i), online, mode
        )
        return fwd + rev

    def sym_decoder(key_i, seq_i, key_j, seq_j) -> Tensor:
        fwd = 1.0 - _similarity_from_states(
            cache.decoder("on", key_i, seq_i, "x", x), cache.decoder("tg", key_j, seq_j, "x", x), online, mode
        )
        rev = 1.0 - _similarity_from_states(
            cache.decoder("on", key_j, seq_j, "x", x), cache.decoder("tg", key_i, seq_i, "x", x), online, mode
        )
        return fwd + rev

    if cfg.lambda_doc_gold > 0:
        term = sym_encoder("x", x, "y", y)
        result.sim_terms["doc_gold"] = float(term.data)
        total = total + cfg.lambda_doc_gold * term
    if cfg.lambda_doc_gen > 0:
        term = sym_encoder("x", x, "yhat", y_hat)
        result.sim_terms["doc_gen"] = float(term.data)
        total = total + cfg.lambda_doc_gen * term
    if cfg.lambda_gold_gen > 0:
        term = sym_encoder("y", y, "yhat", y_hat)
        result.sim_terms["gold_gen"] = float(term.data)
        total = total + cfg.lambda_gold_gen * term
    if cfg.lambda_gold_gen_dec > 0:
        term = sym_decoder("y", y, "yhat", y_hat)
        result.sim_terms["gold_gen_dec"] = float(term.data)
        total = total + cfg.lambda_gold_gen_dec * term

    result.total = total
    return result


# ----- EMA ----------------------------------------------------------------------


def ema_update(target: TargetNetwork, online: OnlineNetwork, tau: float) -> None:
    """Move every target parameter toward its online twin: t = tau*t + (1-tau)*o.

    Covers the seq2seq model and the projection head (the modules the two
    networks share architecturally).  Must run after the gradient step.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    online_params = dict(online.model.named_parameters(prefix="model."))
    online_params.update(online.project.named_parameters(prefix="project."))
    target_params = dict(target.model.named_parameters(prefix="model."))
    target_params.update(target.project.named_parameters(prefix="project."))
    if set(online_params) != set(target_params):
        raise ShapeError("online/target parameter names diverged; networks are corrupted")
    for name, tp in target_params.items():
        op = online_params[name]
        if tp.data.shape != op.data.shape:
            raise ShapeError(
                f"parameter {name!r} shape diverged: target {tp.data.shape} vs online {op.data.shape}"
            )
        tp.data = tau * tp.data + (1.0 - tau) * op.data
