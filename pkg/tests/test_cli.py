"""End-to-end CLI surface: subcommands, file formats, exit codes."""
import json

import numpy as np
import pytest

from seqco.cli import EXIT_CONFIG, EXIT_OK, main
from seqco.config import save_config
from seqco.harness import EVAL_REPORT_SCHEMA

import jsonschema


@pytest.fixture
def run_cfg_path(tmp_path):
    from tests.test_harness import small_cfg

    cfg = small_cfg(total_steps=6, eval_interval=3, out_dir=str(tmp_path / "run"))
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return path


class TestGenCorpus:
    def test_writes_jsonl_and_vocab(self, tmp_path, capsys):
        out = tmp_path / "corpus.jsonl"
        vocab_out = tmp_path / "vocab.txt"
        code = main([
            "gen-corpus", "--task", "lead-k", "--n", "12", "--seed", "3",
            "--out", str(out), "--vocab-out", str(vocab_out),
        ])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert len(lines) == 12
        rec = json.loads(lines[0])
        assert set(rec) == {"document", "summary"}
        assert vocab_out.exists()

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["gen-corpus", "--n", "5", "--seed", "9", "--out", str(a)])
        main(["gen-corpus", "--n", "5", "--seed", "9", "--out", str(b)])
        assert a.read_text() == b.read_text()


class TestScore:
    def test_hand_values(self, tmp_path, capsys):
        (tmp_path / "cand.txt").write_text("the cat sat\n")
        (tmp_path / "ref.txt").write_text("the cat ran\n")
        out = tmp_path / "report.json"
        code = main([
            "score", "--candidates", str(tmp_path / "cand.txt"),
            "--references", str(tmp_path / "ref.txt"), "--out", str(out),
        ])
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["rouge1"]["f1"] == pytest.approx(2 / 3)
        assert report["rouge2"]["f1"] == pytest.approx(1 / 2)

    def test_novelty_with_documents(self, tmp_path):
        (tmp_path / "cand.txt").write_text("x y z\n")
        (tmp_path / "ref.txt").write_text("x y z\n")
        (tmp_path / "doc.txt").write_text("x y\n")
        out = tmp_path / "report.json"
        main([
            "score", "--candidates", str(tmp_path / "cand.txt"),
            "--references", str(tmp_path / "ref.txt"),
            "--documents", str(tmp_path / "doc.txt"), "--out", str(out),
        ])
        report = json.loads(out.read_text())
        assert report["novel_ngrams"]["1"] == pytest.approx(1 / 3)

    def test_length_mismatch_is_config_error(self, tmp_path):
        (tmp_path / "cand.txt").write_text("a\nb\n")
        (tmp_path / "ref.txt").write_text("a\n")
        code = main([
            "score", "--candidates", str(tmp_path / "cand.txt"),
            "--references", str(tmp_path / "ref.txt"),
        ])
        assert code == EXIT_CONFIG


class TestTrainEvaluateDecode:
    def test_train_then_evaluate_then_decode(self, tmp_path, run_cfg_path, capsys):
        code = main(["train", "--config", str(run_cfg_path)])
        assert code == EXIT_OK
        run_dir = tmp_path / "run"
        ckpt = run_dir / "ckpt_final.npz"
        assert ckpt.exists()

        corpus = tmp_path / "eval.jsonl"
        main(["gen-corpus", "--task", "lead-k", "--n", "4", "--seed", "5",
              "--out", str(corpus), "--vocab-size", "32"])
        report_path = tmp_path / "report.json"
        code = main([
            "evaluate", "--checkpoint", str(ckpt), "--corpus", str(corpus),
            "--max-len", "20", "--out", str(report_path),
        ])
        assert code == EXIT_OK
        jsonschema.validate(json.loads(report_path.read_text()), EVAL_REPORT_SCHEMA)

        docs = tmp_path / "docs.txt"
        docs.write_text("w00 w01 w02 .\nw03 w04 .\n")
        outs = tmp_path / "sums.txt"
        code = main(["decode", "--checkpoint", str(ckpt), "--input", str(docs),
                     "--output", str(outs), "--max-len", "20"])
        assert code == EXIT_OK
        assert len(outs.read_text().splitlines()) == 2

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["train", "--config", str(bad)]) == EXIT_CONFIG

    def test_seed_override_changes_run(self, tmp_path, run_cfg_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["train", "--config", str(run_cfg_path), "--seed", "1", "--out", str(out_a)])
        main(["train", "--config", str(run_cfg_path), "--seed", "2", "--out", str(out_b)])
        assert (out_a / "runlog.jsonl").read_text() != (out_b / "runlog.jsonl").read_text()


class TestAblateCli:
    def test_ablate_with_explicit_grid(self, tmp_path, run_cfg_path, capsys):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps([
            {"name": "baseline", "seqco": {}},
            {"name": "doc-gold", "seqco": {"lambda_doc_gold": 1.0}},
        ]))
        report_path = tmp_path / "ablation.json"
        code = main(["ablate", "--config", str(run_cfg_path), "--grid", str(grid_path),
                     "--out", str(report_path)])
        assert code == EXIT_OK
        report = json.loads(report_path.read_text())
        assert [r["name"] for r in report["rows"]] == ["baseline", "doc-gold"]
        shown = capsys.readouterr().out
        assert "doc-gold" in shown


class TestGradCheckCli:
    def test_passes(self, capsys):
        assert main(["grad-check", "--tol", "1e-3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "gradient checks passed" in out
