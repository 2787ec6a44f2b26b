"""Attention-based encoder-decoder toolkit for text and speech translation."""

from .autodiff import ParameterStore, Tape, Tensor, adam_update, backprop, gradient_check
from .bleu import bleu_score, corpus_bleu
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import ParallelCorpus, Vocabulary, make_batches, tokenize
from .lm import TrigramModel, lm_logprob, load_lm, save_lm, train_trigram
from .model import Seq2SeqModel
from .search import DecodeResult, FusionWeights, beam_search, greedy_decode

__version__ = "0.1.0"

__all__ = [
    "DecodeResult",
    "FusionWeights",
    "ParallelCorpus",
    "ParameterStore",
    "RunConfig",
    "Seq2SeqModel",
    "Tape",
    "Tensor",
    "TrigramModel",
    "Vocabulary",
    "adam_update",
    "backprop",
    "beam_search",
    "bleu_score",
    "corpus_bleu",
    "gradient_check",
    "greedy_decode",
    "lm_logprob",
    "load_checkpoint",
    "load_lm",
    "make_batches",
    "save_checkpoint",
    "save_lm",
    "tokenize",
    "train_trigram",
]
