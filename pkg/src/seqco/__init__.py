"""Sequence-level contrastive training for a miniature summarization model.

A from-scratch stack: a reverse-mode autodiff engine over numpy arrays, an
encoder-decoder transformer, the contrastive objective with its momentum
target network, greedy/beam decoding, synthetic corpora, ROUGE metrics and
an experiment harness with a CLI.
"""

from .corpus import TokenSequence, Vocabulary
from .decoding import DecodeConfig, beam_search, greedy_decode
from .harness import Trainer, ablate, evaluate_pairs, train
from .objective import OnlineNetwork, SeqCoConfig, TargetNetwork, combined_loss, ema_update
from .optim import Adam, ScheduleConfig, lr_at
from .tensor import ComputationTape, Tensor, no_grad, set_nan_guard
from .transformer import ModelConfig, Seq2SeqTransformer, nll_loss

__all__ = [
    "Adam",
    "ComputationTape",
    "DecodeConfig",
    "ModelConfig",
    "OnlineNetwork",
    "ScheduleConfig",
    "Seq2SeqTransformer",
    "SeqCoConfig",
    "TargetNetwork",
    "Tensor",
    "TokenSequence",
    "Trainer",
    "Vocabulary",
    "ablate",
    "beam_search",
    "combined_loss",
    "ema_update",
    "evaluate_pairs",
    "greedy_decode",
    "lr_at",
    "nll_loss",
    "no_grad",
    "set_nan_guard",
    "train",
]
__version__ = "0.1.0"
