"""Command-line driver.

Subcommands: train, ablate, evaluate, decode, score, gen-corpus, grad-check.
Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .corpus import (
    CorpusConfig,
    Vocabulary,
    build_vocabulary,
    load_corpus_jsonl,
    make_synthetic_corpus,
    save_corpus_jsonl,
    tokenize,
    detokenize,
)
from .decoding import DecodeConfig, beam_search
from .errors import ConfigError, NumericalError, SeqcoError
from .harness import (
    ablate,
    default_ablation_grid,
    evaluate_checkpoint,
    render_ablation_table,
    train,
)
from .metrics import novel_ngram_proportion, rouge_l, rouge_n
from .transformer import load_checkpoint

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqco", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("train", help="run one training configuration")
    q.add_argument("--config", required=True, help="experiment config (JSON)")
    q.add_argument("--seed", type=int, default=None, help="override the config seed")
    q.add_argument("--out", default=None, help="override the output directory")

    q = sub.add_parser("ablate", help="run a grid of loss configurations")
    q.add_argument("--config", required=True, help="base experiment config (JSON)")
    q.add_argument("--grid", default=None, help="grid file (JSON list); default: built-in ten-row grid")
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out", default=None, help="where to write the report JSON")

    q = sub.add_parser("evaluate", help="score a checkpoint against a corpus file")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--corpus", required=True, help="JSON-lines corpus with document/summary fields")
    q.add_argument("--protocol", choices=["full_f1", "limited_recall"], default="full_f1")
    q.add_argument("--vocab", default=None, help="vocabulary file; must match the checkpoint")
    q.add_argument("--beam-size", type=int, default=4)
    q.add_argument("--max-len", type=int, default=22)
    q.add_argument("--min-len", type=int, default=2)
    q.add_argument("--length-penalty", type=float, default=1.0)
    q.add_argument("--no-trigram-blocking", action="store_true")
    q.add_argument("--out", default=None, help="report path (default: stdout)")

    q = sub.add_parser("decode", help="summarize one document per input line")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--input", required=True, help="text file, one document per line")
    q.add_argument("--output", required=True, help="one summary per line")
    q.add_argument("--beam-size", type=int, default=4)
    q.add_argument("--max-len", type=int, default=22)
    q.add_argument("--min-len", type=int, default=2)
    q.add_argument("--length-penalty", type=float, default=1.0)
    q.add_argument("--no-trigram-blocking", action="store_true")

    q = sub.add_parser("score", help="ROUGE + novelty for candidate/reference files")
    q.add_argument("--candidates", required=True, help="one candidate summary per line")
    q.add_argument("--references", required=True, help="one reference summary per line")
    q.add_argument("--documents", default=None, help="optional source documents for novelty")
    q.add_argument("--out", default=None, help="report path (default: stdout)")

    q = sub.add_parser("gen-corpus", help="write a synthetic corpus as JSON lines")
    q.add_argument("--task", choices=["lead-k", "keyword"], default="lead-k")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--out", required=True, help="corpus JSONL path")
    q.add_argument("--vocab-out", default=None, help="also write the vocabulary file")
    q.add_argument("--vocab-size", type=int, default=64)

    q = sub.add_parser("grad-check", help="finite-difference check of the gradients")
    q.add_argument("--tol", type=float, default=1e-3)
    q.add_argument("--seed", type=int, default=0)

    return p


def _decode_cfg(args) -> DecodeConfig:
    return DecodeConfig(
        beam_size=args.beam_size,
        max_len=args.max_len,
        min_len=args.min_len,
        length_penalty=args.length_penalty,
        block_trigrams=not args.no_trigram_blocking,
    )


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    result = train(cfg)
    headline = result.final_val["headline"]
    print(f"final val ROUGE-1/2/L: {headline['rouge1']:.4f} {headline['rouge2']:.4f} {headline['rougeL']:.4f}")
    if result.out_dir:
        print(f"artifacts in {result.out_dir}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.grid:
        try:
            grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read grid {args.grid}: {err}") from err
    else:
        grid = default_ablation_grid()
    report = ablate(cfg, grid)
    print(render_ablation_table(report))
    if args.out:
        _emit(report, args.out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    report = evaluate_checkpoint(
        args.checkpoint,
        corpus_path=args.corpus,
        decode_cfg=_decode_cfg(args),
        protocol=args.protocol,
        vocab=vocab,
    )
    _emit(report, args.out)
    return EXIT_OK


def _cmd_decode(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    cfg = _decode_cfg(args)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    with open(args.output, "w", encoding="utf-8") as fh:
        for line in lines:
            seq = tokenize(line, vocab)
            out = beam_search(model, seq, cfg)
            fh.write(detokenize(out, vocab) + "\n")
    print(f"decoded {len(lines)} documents -> {args.output}")
    return EXIT_OK


def _cmd_score(args) -> int:
    candidates = Path(args.candidates).read_text(encoding="utf-8").splitlines()
    references = Path(args.references).read_text(encoding="utf-8").splitlines()
    if len(candidates) != len(references):
        raise ConfigError(f"{len(candidates)} candidates vs {len(references)} references")
    documents = None
    if args.documents:
        documents = Path(args.documents).read_text(encoding="utf-8").splitlines()
        if len(documents) != len(candidates):
            raise ConfigError("documents file length differs from candidates")
    n = len(candidates)
    if n == 0:
        raise ConfigError("empty candidate file")
    acc = {k: {"precision": 0.0, "recall": 0.0, "f1": 0.0} for k in ("rouge1", "rouge2", "rougeL")}
    novelty = {1: 0.0, 2: 0.0, 3: 0.0}
    import warnings as _warnings

    for i in range(n):
        cand = candidates[i].lower().split()
        ref = references[i].lower().split()
        triples = {
            "rouge1": rouge_n(cand, ref, 1),
            "rouge2": rouge_n(cand, ref, 2),
            "rougeL": rouge_l(cand, ref),
        }
        for key, score in triples.items():
            acc[key]["precision"] += score.precision
            acc[key]["recall"] += score.recall
            acc[key]["f1"] += score.f1
        if documents:
            doc = documents[i].lower().split()
            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore", RuntimeWarning)
                for order in novelty:
                    novelty[order] += novel_ngram_proportion(cand, doc, order)
    report = {key: {s: acc[key][s] / n for s in ("precision", "recall", "f1")} for key in acc}
    if documents:
        report["novel_ngrams"] = {str(k): novelty[k] / n for k in novelty}
    report["n_examples"] = n
    _emit(report, args.out)
    return EXIT_OK


def _cmd_gen_corpus(args) -> int:
    cfg = CorpusConfig(task=args.task, seed=args.seed, vocab_size=args.vocab_size)
    pairs = make_synthetic_corpus(args.task, args.n, args.seed, cfg)
    vocab = build_vocabulary(cfg)
    save_corpus_jsonl(pairs, vocab, args.out)
    print(f"wrote {len(pairs)} pairs -> {args.out}")
    if args.vocab_out:
        vocab.save(args.vocab_out)
        print(f"wrote vocabulary -> {args.vocab_out}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    from .gradsuite import run_gradient_suite

    reports = run_gradient_suite(tol=args.tol, seed=args.seed)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(r)
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    return EXIT_OK if not failed else EXIT_FAILED


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "ablate": _cmd_ablate,
        "evaluate": _cmd_evaluate,
        "decode": _cmd_decode,
        "score": _cmd_score,
        "gen-corpus": _cmd_gen_corpus,
        "grad-check": _cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SeqcoError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
