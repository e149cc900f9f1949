"""Greedy and beam-search decoding with trigram blocking and length control.

Decoding is read-only on parameters and records no gradients.  Minimum
length is enforced by suppressing EOS; reaching the maximum length forces
EOS so outputs are always BOS-prefixed and EOS-terminated.  Finished beam
hypotheses are ranked by log-probability / length**alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, TokenSequence, as_token_batch
from .errors import ConfigError
from .tensor import Tensor, no_grad
from .transformer import HiddenStates, Seq2SeqTransformer

NEG_INF = -np.inf


@dataclass
class DecodeConfig:
    beam_size: int = 4
    max_len: int = 32  # generated tokens between the sentinels
    min_len: int = 1
    length_penalty: float = 0.0
    block_trigrams: bool = False

    def __post_init__(self):
        if not 1 <= self.beam_size <= 16:
            raise ConfigError(f"beam_size must lie in [1, 16], got {self.beam_size}")
        if not 0 <= self.min_len < self.max_len:
            raise ConfigError(f"need 0 <= min_len < max_len, got {self.min_len}/{self.max_len}")
        if self.length_penalty < 0:
            raise ConfigError(f"length_penalty must be >= 0, got {self.length_penalty}")


@dataclass
class Hypothesis:
    ids: list[int]  # BOS + generated tokens (+ EOS once finished)
    log_prob: float
    finished: bool = False
    degenerate: bool = False

    @property
    def interior(self) -> list[int]:
        end = -1 if self.finished and self.ids[-1] == EOS_ID else len(self.ids)
        return self.ids[1:end]

    def score(self, alpha: float) -> float:
        scored = max(len(self.ids) - 1, 1)
        return self.log_prob / scored**alpha


class Scorer(Protocol):
    """Next-token log-probabilities conditioned on a fixed source."""

    vocab_size: int

    def log_probs(self, prefixes: list[list[int]]) -> np.ndarray: ...


class TransformerScorer:
    """Adapts a transformer + source document to the Scorer protocol."""

    def __init__(self, model: Seq2SeqTransformer, x):
        self._model = model
        with no_grad():
            self._enc = model.encode(x)
        self.vocab_size = model.config.vocab_size

    def log_probs(self, prefixes: list[list[int]]) -> np.ndarray:
        n = len(prefixes)
        width = len(prefixes[0])
        if any(len(p) != width for p in prefixes):
            raise ConfigError("scorer prefixes must share one length")
        ids = np.asarray(prefixes, dtype=np.int64)
        mask = np.ones_like(ids, dtype=bool)
        states = self._enc.states.data
        enc = HiddenStates(Tensor(np.repeat(states, n, axis=0)), np.repeat(self._enc.mask, n, axis=0))
        with no_grad():
            dec = self._model.decode_prefix(ids, mask, enc)
            logits = self._model.output_logits(dec.states[:, -1, :]).data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _blocked_continuations(ids: list[int]) -> set[int]:
    """Tokens that would repeat a trigram already present in ids."""
    if len(ids) < 2:
        return set()
    seen: dict[tuple[int, int], set[int]] = {}
    for a, b, c in zip(ids, ids[1:], ids[2:]):
        seen.setdefault((a, b), set()).add(c)
    return seen.get((ids[-2], ids[-1]), set())


def _masked_row(row: np.ndarray, hyp_ids: list[int], cfg: DecodeConfig) -> np.ndarray:
    out = row.astype(np.float64, copy=True)
    out[PAD_ID] = NEG_INF
    out[BOS_ID] = NEG_INF
    interior = len(hyp_ids) - 1
    if interior < cfg.min_len:
        out[EOS_ID] = NEG_INF
    if cfg.block_trigrams:
        for t in _blocked_continuations(hyp_ids):
            out[t] = NEG_INF
    if interior >= cfg.max_len:
        keep = out[EOS_ID] if np.isfinite(row[EOS_ID]) else 0.0
        out[:] = NEG_INF
        out[EOS_ID] = keep
    return out


def _beam(scorer: Scorer, cfg: DecodeConfig) -> tuple[Hypothesis, list[Hypothesis]]:
    live = [Hypothesis([BOS_ID], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(cfg.max_len + 1):
        if not live:
            break
        rows = scorer.log_probs([h.ids for h in live])
        scores = np.stack([_masked_row(rows[i], live[i].ids, cfg) for i in range(len(live))])
        totals = scores + np.array([[h.log_prob] for h in live])
        flat = totals.reshape(-1)
        usable = np.isfinite(flat)
        if not usable.any():
            # every continuation blocked while EOS is still suppressed
            best = max(live, key=lambda h: h.score(cfg.length_penalty))
            return Hypothesis(best.ids + [EOS_ID], best.log_prob, finished=True, degenerate=True), finished
        order = np.argsort(-flat, kind="stable")[: cfg.beam_size]
        next_live: list[Hypothesis] = []
        vocab = scores.shape[1]
        for idx in order:
            if not usable[idx]:
                continue
            parent = live[int(idx) // vocab]
            token = int(idx) % vocab
            hyp = Hypothesis(parent.ids + [token], float(flat[idx]))
            if token == EOS_ID:
                hyp.finished = True
                finished.append(hyp)
            else:
                next_live.append(hyp)
        live = next_live
    if not finished:
        best = max(live, key=lambda h: h.score(cfg.length_penalty))
        return Hypothesis(best.ids + [EOS_ID], best.log_prob, finished=True, degenerate=True), finished
    return max(finished, key=lambda h: h.score(cfg.length_penalty)), finished


def _greedy(scorer: Scorer, cfg: DecodeConfig) -> Hypothesis:
    hyp = Hypothesis([BOS_ID], 0.0)
    for _ in range(cfg.max_len + 1):
        row = scorer.log_probs([hyp.ids])[0]
        masked = _masked_row(row, hyp.ids, cfg)
        if not np.isfinite(masked).any():
            return Hypothesis(hyp.ids + [EOS_ID], hyp.log_prob, finished=True, degenerate=True)
        token = int(np.argmax(masked))
        hyp = Hypothesis(hyp.ids + [token], hyp.log_prob + float(masked[token]))
        if token == EOS_ID:
            hyp.finished = True
            return hyp
    return hyp


def greedy_decode_hypothesis(model: Seq2SeqTransformer, x, cfg: DecodeConfig) -> Hypothesis:
    return _greedy(TransformerScorer(model, x), cfg)


def greedy_decode(model: Seq2SeqTransformer, x, cfg: DecodeConfig) -> TokenSequence:
    """Argmax decoding; equals beam_search with beam 1 and no length penalty."""
    return TokenSequence(greedy_decode_hypothesis(model, x, cfg).ids)


def beam_search_hypothesis(model: Seq2SeqTransformer, x, cfg: DecodeConfig) -> Hypothesis:
    return _beam(TransformerScorer(model, x), cfg)[0]


def beam_search(model: Seq2SeqTransformer, x, cfg: DecodeConfig) -> TokenSequence:
    """Best finished hypothesis under the length-penalized score."""
    return TokenSequence(beam_search_hypothesis(model, x, cfg).ids)


def greedy_from_scorer(scorer: Scorer, cfg: DecodeConfig) -> Hypothesis:
    return _greedy(scorer, cfg)


def beam_from_scorer(scorer: Scorer, cfg: DecodeConfig) -> tuple[Hypothesis, list[Hypothesis]]:
    """Best finished hypothesis plus the full finished pool (for inspection)."""
    return _beam(scorer, cfg)


def generate_training_summary(model: Seq2SeqTransformer, x, max_len: int, min_len: int = 2, block_trigrams: bool = False) -> TokenSequence:
    """Greedy sample regenerated fresh from the current parameters."""
    cfg = DecodeConfig(beam_size=1, max_len=max_len, min_len=min_len, block_trigrams=block_trigrams)
    return greedy_decode(model, x, cfg)


def greedy_decode_batch(
    model: Seq2SeqTransformer,
    doc_ids: np.ndarray,
    doc_mask: np.ndarray,
    max_len: int,
    min_len: int = 2,
    block_trigrams: bool = False,
) -> list[TokenSequence]:
    """Batched counterpart of greedy decoding; one decoder pass per step."""
    cfg = DecodeConfig(beam_size=1, max_len=max_len, min_len=min_len, block_trigrams=block_trigrams)
    n = doc_ids.shape[0]
    with no_grad():
        enc = model.encode((doc_ids, doc_mask))
    prefixes = np.full((n, 1), BOS_ID, dtype=np.int64)
    mask = np.ones((n, 1), dtype=bool)
    alive = np.ones(n, dtype=bool)
    hyp_ids: list[list[int]] = [[BOS_ID] for _ in range(n)]
    for _ in range(cfg.max_len + 1):
        with no_grad():
            dec = model.decode_prefix(prefixes, mask, enc)
            logits = model.output_logits(dec.states[:, -1, :]).data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        column = np.full(n, PAD_ID, dtype=np.int64)
        for i in range(n):
            if not alive[i]:
                continue
            masked = _masked_row(logp[i], hyp_ids[i], cfg)
            if not np.isfinite(masked).any():
                alive[i] = False
                continue
            token = int(np.argmax(masked))
            hyp_ids[i].append(token)
            if token == EOS_ID:
                alive[i] = False
            else:
                column[i] = token
        if not alive.any():
            break
        prefixes = np.concatenate([prefixes, column[:, None]], axis=1)
        mask = np.concatenate([mask, alive.copy()[:, None]], axis=1)
    out = []
    for ids in hyp_ids:
        if ids[-1] != EOS_ID:
            ids = ids + [EOS_ID]
        out.append(TokenSequence(ids))
    return out
