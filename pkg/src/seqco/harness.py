"""Experiment driver: training loop, evaluation protocols, ablation grid.

Every run is a pure function of (config, seed): corpus generation, batch
order, initialization and decoding all draw from seeded generators, so two
runs with the same config produce bit-identical logs.
"""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, save_config
from .corpus import (
    ExamplePair,
    Vocabulary,
    build_vocabulary,
    detokenize,
    make_batches,
    make_synthetic_corpus,
    pad_sequences,
)
from .decoding import DecodeConfig, beam_search, greedy_decode_batch
from .errors import CheckpointError, ConfigError, NumericalError
from .metrics import novel_ngram_proportion, rouge_l, rouge_limited_recall, rouge_n
from .objective import CombinedLoss, OnlineNetwork, SeqCoConfig, TargetNetwork, combined_loss, ema_update
from .optim import Adam, lr_at
from .tensor import Tensor
from .transformer import Seq2SeqTransformer, load_checkpoint, nll_loss, save_checkpoint


class RunLog:
    """Append-only per-step and per-eval records, serialized as JSON lines."""

    def __init__(self, records: list[dict] | None = None):
        self.records = records or []

    def append(self, record: dict) -> None:
        self.records.append(record)

    def steps(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "step"]

    def evals(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "eval"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        records = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        return cls(records)


# ----- evaluation -------------------------------------------------------------


def _score_triple(candidate: list[str], reference: list[str], protocol: str) -> dict:
    if protocol == "limited_recall":
        return {
            "rouge1": rouge_limited_recall(candidate, reference, 1),
            "rouge2": rouge_limited_recall(candidate, reference, 2),
            "rougeL": rouge_limited_recall(candidate, reference, "L"),
        }
    return {
        "rouge1": rouge_n(candidate, reference, 1),
        "rouge2": rouge_n(candidate, reference, 2),
        "rougeL": rouge_l(candidate, reference),
    }


def evaluate_pairs(
    model: Seq2SeqTransformer,
    vocab: Vocabulary,
    pairs: list[ExamplePair],
    decode_cfg: DecodeConfig,
    protocol: str = "full_f1",
) -> dict:
    """Decode every document, score against the gold summaries, report means."""
    if protocol not in ("full_f1", "limited_recall"):
        raise ConfigError(f"unknown evaluation protocol {protocol!r}")
    sums = {k: {"precision": 0.0, "recall": 0.0, "f1": 0.0} for k in ("rouge1", "rouge2", "rougeL")}
    novelty = {1: 0.0, 2: 0.0, 3: 0.0}
    for pair in pairs:
        decoded = beam_search(model, pair.document, decode_cfg)
        candidate = detokenize(decoded, vocab).split()
        reference = detokenize(pair.summary, vocab).split()
        document = detokenize(pair.document, vocab).split()
        triple = _score_triple(candidate, reference, protocol)
        for key, score in triple.items():
            sums[key]["precision"] += score.precision
            sums[key]["recall"] += score.recall
            sums[key]["f1"] += score.f1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for n in novelty:
                novelty[n] += novel_ngram_proportion(candidate, document, n)
    n = len(pairs)
    report = {"protocol": protocol, "n_examples": n}
    for key, acc in sums.items():
        report[key] = {stat: acc[stat] / n for stat in ("precision", "recall", "f1")}
    report["novel_ngrams"] = {str(k): novelty[k] / n for k in novelty}
    headline_stat = "recall" if protocol == "limited_recall" else "f1"
    report["headline"] = {key: report[key][headline_stat] for key in ("rouge1", "rouge2", "rougeL")}
    return report


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    pairs: list[ExamplePair] | None = None,
    corpus_path: str | Path | None = None,
    decode_cfg: DecodeConfig | None = None,
    protocol: str = "full_f1",
    vocab: Vocabulary | None = None,
) -> dict:
    """Score a stored model.  An explicitly supplied vocabulary must match
    the checkpoint's own, otherwise the corpus was built for another model."""
    from .corpus import load_corpus_jsonl

    model, ckpt_vocab, _meta = load_checkpoint(checkpoint_path)
    if vocab is not None and vocab != ckpt_vocab:
        raise CheckpointError("vocabulary mismatch between checkpoint and corpus")
    if pairs is None:
        if corpus_path is None:
            raise ConfigError("evaluate needs either loaded pairs or a corpus file")
        pairs = load_corpus_jsonl(corpus_path, ckpt_vocab)
    return evaluate_pairs(model, ckpt_vocab, pairs, decode_cfg or DecodeConfig(), protocol)


# ----- trainer ------------------------------------------------------------------


@dataclass
class TrainResult:
    runlog: RunLog
    final_val: dict
    final_test: dict
    out_dir: str | None
    checkpoint_path: str | None
    model: Seq2SeqTransformer
    vocab: Vocabulary


class Trainer:
    """Owns one training run; exposes single steps for instrumentation.

    loss_mode: "auto" uses the combined objective only when a similarity
    weight is active; "combined" forces the combined code path (its all-zero
    reduction is the plain NLL); "nll_only" bypasses the contrastive code
    entirely.
    """

    def __init__(self, cfg: ExperimentConfig, loss_mode: str = "auto", instrument: bool = False):
        if loss_mode not in ("auto", "combined", "nll_only"):
            raise ConfigError(f"unknown loss_mode {loss_mode!r}")
        if loss_mode == "nll_only" and cfg.seqco.any_active:
            raise ConfigError("nll_only loss_mode conflicts with active similarity weights")
        self.cfg = cfg
        self.use_combined = cfg.seqco.any_active or loss_mode == "combined"
        self.instrument = instrument
        self.events: list[tuple[str, int]] = []
        self.generation_count = 0
        self.step = 0

        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        init_rng = np.random.default_rng(seeds[0])
        self._shuffle_rng = np.random.default_rng(seeds[1])

        self.vocab = build_vocabulary(cfg.corpus)
        total_pairs = cfg.corpus.n_train + cfg.corpus.n_val + cfg.corpus.n_test
        pairs = make_synthetic_corpus(cfg.corpus.task, total_pairs, cfg.corpus.seed, cfg.corpus)
        self.train_pairs = pairs[: cfg.corpus.n_train]
        self.val_pairs = pairs[cfg.corpus.n_train : cfg.corpus.n_train + cfg.corpus.n_val]
        self.test_pairs = pairs[cfg.corpus.n_train + cfg.corpus.n_val :]

        model = Seq2SeqTransformer(cfg.model, init_rng)
        self.online = OnlineNetwork(model, cfg.seqco, init_rng)
        self.target = TargetNetwork.from_online(self.online) if self.use_combined and cfg.seqco.any_active else None
        self.adam = Adam(self.online.param_dict(), grad_clip=cfg.grad_clip, post_step=self._after_gradient_step)
        self.runlog = RunLog()
        self._batches = self._batch_stream()
        self._gen_max = cfg.train_gen.resolved_max_len(cfg.corpus.sum_cap)

    # -- internals --

    def _after_gradient_step(self) -> None:
        if self.instrument:
            self.events.append(("adam_step", self.step))
        if self.target is not None:
            ema_update(self.target, self.online, self.cfg.seqco.tau)
            if self.instrument:
                self.events.append(("ema_update", self.step))

    def _batch_stream(self):
        while True:
            seed = int(self._shuffle_rng.integers(0, 2**31 - 1))
            yield from make_batches(self.train_pairs, self.cfg.batch_size, shuffle_seed=seed)

    def _step_loss(self, batch) -> CombinedLoss:
        x = (batch.doc_ids, batch.doc_mask)
        y = (batch.sum_ids, batch.sum_mask)
        if not self.use_combined:
            total = nll_loss(self.online.model, x, y, self.cfg.label_smoothing)
            return CombinedLoss(total=total, nll=float(total.data))
        y_hat = None
        if self.cfg.seqco.needs_generated:
            generated = greedy_decode_batch(
                self.online.model,
                batch.doc_ids,
                batch.doc_mask,
                max_len=self._gen_max,
                min_len=self.cfg.train_gen.min_len,
                block_trigrams=self.cfg.train_gen.block_trigrams,
            )
            self.generation_count += 1
            y_hat = pad_sequences(generated)
        return combined_loss(x, y, y_hat, self.online, self.target, self.cfg.seqco, self.cfg.label_smoothing)

    # -- public stepping --

    def run_step(self) -> dict:
        batch = next(self._batches)
        self.step += 1
        lr = lr_at(self.step, self.cfg.schedule)
        out = self._step_loss(batch)
        loss_val = float(out.total.data)
        if not np.isfinite(loss_val):
            raise NumericalError(f"loss became non-finite at step {self.step}")
        out.total.backward()
        grad_norm = self.adam.step(lr)
        record = {
            "type": "step",
            "step": self.step,
            "loss": loss_val,
            "nll": out.nll,
            "sim": out.sim_terms,
            "lr": lr,
            "grad_norm": grad_norm,
        }
        self.runlog.append(record)
        return record

    def evaluate_split(self, pairs: list[ExamplePair]) -> dict:
        return evaluate_pairs(self.online.model, self.vocab, pairs, self.cfg.decode, self.cfg.protocol)

    def train(self) -> TrainResult:
        out_dir = Path(self.cfg.out_dir) if self.cfg.out_dir else None
        ckpt_path = None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            save_config(self.cfg, out_dir / "resolved_config.json")
        try:
            for _ in range(self.cfg.schedule.total_steps):
                self.run_step()
                if self.step % self.cfg.eval_interval == 0 or self.step == self.cfg.schedule.total_steps:
                    report = self.evaluate_split(self.val_pairs)
                    self.runlog.append({"type": "eval", "step": self.step, **report})
                    if out_dir:
                        ckpt_path = out_dir / f"ckpt_step{self.step:06d}.npz"
                        self._save_checkpoint(ckpt_path)
        except NumericalError:
            if out_dir:
                self.runlog.save(out_dir / "runlog.jsonl")
            raise
        final_val = self.runlog.evals()[-1] if self.runlog.evals() else self.evaluate_split(self.val_pairs)
        final_val = {k: v for k, v in final_val.items() if k not in ("type", "step")}
        final_test = evaluate_pairs(self.online.model, self.vocab, self.test_pairs, self.cfg.decode, self.cfg.protocol)
        if out_dir:
            ckpt_path = out_dir / "ckpt_final.npz"
            self._save_checkpoint(ckpt_path)
            self.runlog.save(out_dir / "runlog.jsonl")
            (out_dir / "final_eval.json").write_text(
                json.dumps({"val": final_val, "test": final_test}, indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        return TrainResult(
            runlog=self.runlog,
            final_val=final_val,
            final_test=final_test,
            out_dir=str(out_dir) if out_dir else None,
            checkpoint_path=str(ckpt_path) if ckpt_path else None,
            model=self.online.model,
            vocab=self.vocab,
        )

    def _save_checkpoint(self, path: Path) -> None:
        extra = {"step": self.step, "seqco": asdict(self.cfg.seqco), "protocol": self.cfg.protocol}
        save_checkpoint(path, self.online.model, self.vocab, extra=extra)


def train(cfg: ExperimentConfig, loss_mode: str = "auto") -> TrainResult:
    return Trainer(cfg, loss_mode=loss_mode).train()


# ----- ablation grid -------------------------------------------------------------


def default_ablation_grid(weight: float = 1.0) -> list[dict]:
    """Baseline, the three single losses, the three pairs, the triple, the
    decoder-side loss, and the CLS-pooling variant."""
    w = weight
    return [
        {"name": "baseline", "seqco": {}},
        {"name": "doc-gold", "seqco": {"lambda_doc_gold": w}},
        {"name": "doc-gen", "seqco": {"lambda_doc_gen": w}},
        {"name": "gold-gen", "seqco": {"lambda_gold_gen": w}},
        {"name": "gold-gen-cls", "seqco": {"lambda_gold_gen": w, "similarity_mode": "cls"}},
        {"name": "doc-gold+doc-gen", "seqco": {"lambda_doc_gold": w, "lambda_doc_gen": w}},
        {"name": "doc-gold+gold-gen", "seqco": {"lambda_doc_gold": w, "lambda_gold_gen": w}},
        {"name": "doc-gen+gold-gen", "seqco": {"lambda_doc_gen": w, "lambda_gold_gen": w}},
        {"name": "doc-gold+doc-gen+gold-gen", "seqco": {"lambda_doc_gold": w, "lambda_doc_gen": w, "lambda_gold_gen": w}},
        {"name": "gold-gen-decoder", "seqco": {"lambda_gold_gen_dec": w}},
    ]


def ablate(base_cfg: ExperimentConfig, grid: list[dict]) -> dict:
    """Run every configuration with the shared seed and corpus; one row each."""
    if not grid:
        raise ConfigError("ablation grid is empty")
    rows = []
    base_seqco = asdict(base_cfg.seqco)
    for entry in grid:
        if "name" not in entry:
            raise ConfigError("every grid entry needs a 'name'")
        overrides = entry.get("seqco", {})
        merged = {**base_seqco, **overrides}
        cfg = dataclasses.replace(base_cfg, seqco=SeqCoConfig(**merged), out_dir=None)
        result = train(cfg)
        rows.append(
            {
                "name": entry["name"],
                "config": {
                    "lambdas": {
                        "doc_gold": merged["lambda_doc_gold"],
                        "doc_gen": merged["lambda_doc_gen"],
                        "gold_gen": merged["lambda_gold_gen"],
                        "gold_gen_dec": merged["lambda_gold_gen_dec"],
                    },
                    "similarity_mode": merged["similarity_mode"],
                },
                "val": result.final_val["headline"],
                "test": result.final_test["headline"],
            }
        )
    return {
        "task": base_cfg.corpus.task,
        "seed": base_cfg.seed,
        "protocol": base_cfg.protocol,
        "rows": rows,
    }


def render_ablation_table(report: dict) -> str:
    header = f"{'configuration':<30} {'val R-1':>8} {'val R-2':>8} {'val R-L':>8} {'test R-1':>9} {'test R-2':>9} {'test R-L':>9}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        v, t = row["val"], row["test"]
        lines.append(
            f"{row['name']:<30} {v['rouge1']:>8.4f} {v['rouge2']:>8.4f} {v['rougeL']:>8.4f} "
            f"{t['rouge1']:>9.4f} {t['rouge2']:>9.4f} {t['rougeL']:>9.4f}"
        )
    return "\n".join(lines)


# ----- published report schemas ----------------------------------------------------

_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_ROUGE_TRIPLE = {
    "type": "object",
    "required": ["precision", "recall", "f1"],
    "properties": {"precision": _UNIT, "recall": _UNIT, "f1": _UNIT},
    "additionalProperties": False,
}
_HEADLINE = {
    "type": "object",
    "required": ["rouge1", "rouge2", "rougeL"],
    "properties": {"rouge1": _UNIT, "rouge2": _UNIT, "rougeL": _UNIT},
    "additionalProperties": False,
}

EVAL_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["protocol", "n_examples", "rouge1", "rouge2", "rougeL", "novel_ngrams", "headline"],
    "properties": {
        "protocol": {"enum": ["full_f1", "limited_recall"]},
        "n_examples": {"type": "integer", "minimum": 1},
        "rouge1": _ROUGE_TRIPLE,
        "rouge2": _ROUGE_TRIPLE,
        "rougeL": _ROUGE_TRIPLE,
        "novel_ngrams": {
            "type": "object",
            "required": ["1", "2", "3"],
            "properties": {"1": _UNIT, "2": _UNIT, "3": _UNIT},
            "additionalProperties": False,
        },
        "headline": _HEADLINE,
    },
    "additionalProperties": False,
}

ABLATION_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["task", "seed", "protocol", "rows"],
    "properties": {
        "task": {"type": "string"},
        "seed": {"type": "integer"},
        "protocol": {"enum": ["full_f1", "limited_recall"]},
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "config", "val", "test"],
                "properties": {
                    "name": {"type": "string"},
                    "config": {
                        "type": "object",
                        "required": ["lambdas", "similarity_mode"],
                        "properties": {
                            "lambdas": {
                                "type": "object",
                                "required": ["doc_gold", "doc_gen", "gold_gen", "gold_gen_dec"],
                                "additionalProperties": {"type": "number", "minimum": 0},
                            },
                            "similarity_mode": {"enum": ["mha", "cls"]},
                        },
                        "additionalProperties": False,
                    },
                    "val": _HEADLINE,
                    "test": _HEADLINE,
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}
