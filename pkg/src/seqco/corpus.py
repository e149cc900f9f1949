"""Tokenization, vocabulary, synthetic summarization corpora and batching.

The synthetic tasks are deterministic functions of (task, n, seed) and give
training a verifiable target: ``lead-k`` summaries are an exact prefix of
the document (ROUGE ceiling 1.0), ``keyword`` summaries are the document's
keyword tokens in order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ["<pad>", "<s>", "</s>", "<unk>"]

SENT_END = "."


@dataclass
class TokenSequence:
    """Id sequence bracketed by the begin/end sentinels."""

    ids: list[int]

    def __post_init__(self):
        if len(self.ids) < 2:
            raise ShapeError(f"token sequence needs at least BOS and EOS, got {len(self.ids)} ids")
        if self.ids[0] != BOS_ID or self.ids[-1] != EOS_ID:
            raise ShapeError("token sequence must start with BOS and end with EOS")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def interior(self) -> list[int]:
        return self.ids[1:-1]


class Vocabulary:
    """Bijective token <-> id map with fixed reserved ids."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be unique")
        if any(t in RESERVED for t in tokens):
            raise ConfigError("reserved token names cannot be re-registered")
        self.id_to_token = RESERVED + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def tokens(self) -> list[str]:
        """Content tokens only, in id order (reserved ids excluded)."""
        return self.id_to_token[len(RESERVED):]

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode_id(self, idx: int) -> str:
        return self.id_to_token[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
        return cls(lines)


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Whitespace-split, lowercased; unknown words map to UNK."""
    ids = [vocab.encode_token(w) for w in text.lower().split()]
    return TokenSequence([BOS_ID] + ids + [EOS_ID])


def detokenize(seq: TokenSequence | list[int], vocab: Vocabulary) -> str:
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    words = [vocab.decode_id(i) for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]
    return " ".join(words)


@dataclass
class ExamplePair:
    document: TokenSequence
    summary: TokenSequence


@dataclass
class CorpusConfig:
    task: str = "lead-k"
    n_train: int = 512
    n_val: int = 64
    n_test: int = 64
    seed: int = 0
    vocab_size: int = 64
    doc_cap: int = 64
    sum_cap: int = 24
    lead_k: int = 2
    sentence_words: tuple[int, int] = (3, 6)
    sentences_per_doc: tuple[int, int] = (3, 6)
    keywords_per_doc: tuple[int, int] = (2, 4)
    n_keyword_types: int = 15

    def __post_init__(self):
        if self.task not in ("lead-k", "keyword"):
            raise ConfigError(f"unknown corpus task {self.task!r}")
        if self.vocab_size < len(RESERVED) + 2:
            raise ConfigError("vocab_size too small for reserved ids plus content")
        if self.sentences_per_doc[0] <= self.lead_k and self.task == "lead-k":
            raise ConfigError("lead-k needs documents strictly longer than k sentences")
        for lo, hi in (self.sentence_words, self.sentences_per_doc, self.keywords_per_doc):
            if lo < 1 or hi < lo:
                raise ConfigError("range parameters must satisfy 1 <= lo <= hi")
        # worst-case document must fit the cap with its sentinels
        worst = self.sentences_per_doc[1] * (self.sentence_words[1] + 1) + 2
        if worst > self.doc_cap:
            raise ConfigError(f"documents can reach {worst} tokens but doc_cap is {self.doc_cap}")


def build_vocabulary(cfg: CorpusConfig) -> Vocabulary:
    """Deterministic closed vocabulary for a synthetic task."""
    n_content = cfg.vocab_size - len(RESERVED)
    if cfg.task == "keyword":
        n_kw = min(cfg.n_keyword_types, n_content - 2)
        fillers = n_content - 1 - n_kw
        words = [SENT_END] + [f"kw{i:02d}" for i in range(n_kw)] + [f"w{i:02d}" for i in range(fillers)]
    else:
        words = [SENT_END] + [f"w{i:02d}" for i in range(n_content - 1)]
    return Vocabulary(words)


def _lead_k_pair(rng: np.random.Generator, vocab: Vocabulary, cfg: CorpusConfig) -> ExamplePair:
    words = [w for w in vocab.tokens if w != SENT_END]
    n_sents = int(rng.integers(max(cfg.lead_k + 1, cfg.sentences_per_doc[0]), cfg.sentences_per_doc[1] + 1))
    sentences = []
    for _ in range(n_sents):
        n_words = int(rng.integers(cfg.sentence_words[0], cfg.sentence_words[1] + 1))
        sentences.append([words[i] for i in rng.integers(0, len(words), size=n_words)] + [SENT_END])
    doc_tokens = [t for s in sentences for t in s]
    sum_tokens = [t for s in sentences[: cfg.lead_k] for t in s]
    doc = TokenSequence([BOS_ID] + [vocab.encode_token(t) for t in doc_tokens] + [EOS_ID])
    summ = TokenSequence([BOS_ID] + [vocab.encode_token(t) for t in sum_tokens] + [EOS_ID])
    return ExamplePair(doc, summ)


def _keyword_pair(rng: np.random.Generator, vocab: Vocabulary, cfg: CorpusConfig) -> ExamplePair:
    keywords = [w for w in vocab.tokens if w.startswith("kw")]
    fillers = [w for w in vocab.tokens if w.startswith("w")]
    n_sents = int(rng.integers(cfg.sentences_per_doc[0], cfg.sentences_per_doc[1] + 1))
    n_kw = int(rng.integers(cfg.keywords_per_doc[0], cfg.keywords_per_doc[1] + 1))
    picked = [keywords[i] for i in rng.integers(0, len(keywords), size=n_kw)]
    sentences = []
    for _ in range(n_sents):
        n_words = int(rng.integers(cfg.sentence_words[0], cfg.sentence_words[1] + 1))
        sentences.append([fillers[i] for i in rng.integers(0, len(fillers), size=n_words)] + [SENT_END])
    # scatter the keywords over distinct slots, preserving their order
    slots = sorted(rng.choice(n_sents, size=n_kw, replace=True).tolist())
    for kw, sent_idx in zip(picked, slots):
        pos = int(rng.integers(0, len(sentences[sent_idx])))
        sentences[sent_idx].insert(pos, kw)
    doc_tokens = [t for s in sentences for t in s]
    sum_tokens = [t for t in doc_tokens if t.startswith("kw")]
    doc = TokenSequence([BOS_ID] + [vocab.encode_token(t) for t in doc_tokens] + [EOS_ID])
    summ = TokenSequence([BOS_ID] + [vocab.encode_token(t) for t in sum_tokens] + [EOS_ID])
    return ExamplePair(doc, summ)


def make_synthetic_corpus(task: str, n: int, seed: int, cfg: CorpusConfig | None = None) -> list[ExamplePair]:
    """Generate n example pairs; a pure function of (task, n, seed, cfg)."""
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    if cfg is None:
        cfg = CorpusConfig(task=task)
    elif cfg.task != task:
        raise ConfigError(f"task {task!r} disagrees with config task {cfg.task!r}")
    vocab = build_vocabulary(cfg)
    rng = np.random.default_rng(seed)
    make = _lead_k_pair if task == "lead-k" else _keyword_pair
    pairs = [make(rng, vocab, cfg) for _ in range(n)]
    for p in pairs:
        if len(p.document) > cfg.doc_cap or len(p.summary) > cfg.sum_cap:
            raise ConfigError("generated pair exceeds its length cap; adjust the corpus config")
    return pairs


# ----- batching -----------------------------------------------------------


@dataclass
class Batch:
    doc_ids: np.ndarray  # [B, Tx] int64
    doc_mask: np.ndarray  # [B, Tx] bool, True on real tokens
    sum_ids: np.ndarray  # [B, Ty]
    sum_mask: np.ndarray  # [B, Ty]

    @property
    def size(self) -> int:
        return self.doc_ids.shape[0]

    @property
    def decoder_input(self) -> np.ndarray:
        return self.sum_ids[:, :-1]

    @property
    def decoder_input_mask(self) -> np.ndarray:
        return self.sum_mask[:, :-1]

    @property
    def targets(self) -> np.ndarray:
        return self.sum_ids[:, 1:]

    @property
    def target_mask(self) -> np.ndarray:
        return self.sum_mask[:, 1:]


def pad_sequences(seqs: list[TokenSequence] | list[list[int]], pad_id: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    rows = [s.ids if isinstance(s, TokenSequence) else list(s) for s in seqs]
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = True
    return ids, mask


def make_batches(
    pairs: list[ExamplePair],
    batch_size: int,
    pad_id: int = PAD_ID,
    shuffle_seed: int | None = None,
) -> list[Batch]:
    """Pad to the per-batch maximum; order is fixed by the shuffle seed."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(pairs)))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs)).tolist()
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        doc_ids, doc_mask = pad_sequences([p.document for p in chunk], pad_id)
        sum_ids, sum_mask = pad_sequences([p.summary for p in chunk], pad_id)
        batches.append(Batch(doc_ids, doc_mask, sum_ids, sum_mask))
    return batches


def as_token_batch(x, pad_id: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Normalize the accepted sequence forms to (ids [B,T], mask [B,T])."""
    if isinstance(x, TokenSequence):
        return pad_sequences([x], pad_id)
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], TokenSequence):
        return pad_sequences(list(x), pad_id)
    if isinstance(x, tuple) and len(x) == 2:
        ids, mask = x
        return np.asarray(ids), np.asarray(mask, dtype=bool)
    if isinstance(x, np.ndarray):
        if x.ndim != 2:
            raise ShapeError(f"token id arrays must be 2-D [batch, time], got {x.shape}")
        return x, x != pad_id
    raise ShapeError(f"cannot interpret {type(x).__name__} as a token batch")


# ----- file formats ---------------------------------------------------------


def save_corpus_jsonl(pairs: list[ExamplePair], vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"document": detokenize(p.document, vocab), "summary": detokenize(p.summary, vocab)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_corpus_jsonl(path: str | Path, vocab: Vocabulary) -> list[ExamplePair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc, summ = rec["document"], rec["summary"]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise ConfigError(f"{path}:{line_no + 1}: bad corpus record ({err})") from err
            pairs.append(ExamplePair(tokenize(doc, vocab), tokenize(summ, vocab)))
    if not pairs:
        raise ConfigError(f"{path}: corpus file is empty")
    return pairs
