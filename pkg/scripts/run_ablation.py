#!/usr/bin/env python3
"""Run the ten-configuration loss ablation on the lead-k task.

Single losses, pairs, the triple, the decoder-side loss and the
first-position-pooling variant, all sharing one seed and corpus.

    python scripts/run_ablation.py --steps 2000 --weight 1.0 --out ablation.json
"""
import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from seqco.config import ExperimentConfig
from seqco.corpus import CorpusConfig
from seqco.decoding import DecodeConfig
from seqco.harness import ablate, default_ablation_grid, render_ablation_table
from seqco.objective import SeqCoConfig
from seqco.optim import ScheduleConfig
from seqco.transformer import ModelConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--weight", type=float, default=1.0, help="weight given to each active loss")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default=None, help="write the JSON report here")
    args = ap.parse_args()

    base = ExperimentConfig(
        model=ModelConfig(vocab_size=64, d_model=32, n_heads=4, n_encoder_layers=2,
                          n_decoder_layers=2, d_ff=64, max_positions=64),
        corpus=CorpusConfig(task="lead-k", n_train=256, n_val=32, n_test=32, seed=7, vocab_size=64),
        seqco=SeqCoConfig(),
        schedule=ScheduleConfig(peak_lr=1e-3, warmup_steps=min(100, args.steps // 4), total_steps=args.steps),
        decode=DecodeConfig(beam_size=4, max_len=22, min_len=2, length_penalty=1.0, block_trigrams=True),
        seed=args.seed,
        batch_size=16,
        eval_interval=500,
        label_smoothing=0.1,
    )
    report = ablate(base, default_ablation_grid(weight=args.weight))
    print(render_ablation_table(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
