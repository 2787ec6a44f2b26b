"""Training loop with periodic checkpointing, dev validation and
machine-parseable logging.

One log line per step: ``step<TAB>trainLoss<TAB>devLoss<TAB>devBLEU`` with
``-`` in the dev columns outside evaluation steps.  Dev BLEU uses greedy
decoding.  Batch shuffling is derived from (seed, epoch) and dropout from
(seed, step), so a resumed run reproduces an uninterrupted one exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Optional

from .bleu import corpus_bleu
from .corpus import ParallelCorpus, make_batches
from .model import Seq2SeqModel
from .search import greedy_decode


def _epoch_shuffle_seed(seed: int, epoch: int) -> int:
    return abs(seed) * 1_000_003 + epoch


def dev_loss(model: Seq2SeqModel, corpus: ParallelCorpus) -> float:
    tensors = model.store.as_tensors()
    total, tokens = 0.0, 0.0
    for batch in make_batches(corpus, model.config.batch_size, shuffle_seed=0):
        count = batch.real_token_count
        total += model.batch_nll(tensors, batch).item() * count
        tokens += count
    return total / tokens


def dev_greedy_bleu(model: Seq2SeqModel, corpus: ParallelCorpus) -> float:
    hyps, refs = [], []
    for source, target in zip(corpus.sources, corpus.targets):
        result = greedy_decode(model, source)
        hyps.append(model.tgt_vocab.decode_sequence(result.tokens))
        refs.append([model.tgt_vocab.decode_sequence(target)])
    return corpus_bleu(hyps, refs).score


@dataclass
class TrainOutcome:
    final_step: int
    best_step: int
    best_bleu: float
    best_path: str


def train_loop(
    model: Seq2SeqModel,
    train_corpus: ParallelCorpus,
    dev_corpus: Optional[ParallelCorpus],
    save_dir: str,
    log_line: Callable[[str], None],
    stop_early: Optional[Callable[[float], bool]] = None,
) -> TrainOutcome:
    """Runs from the store's current step up to ``config.steps``.

    ``stop_early`` (given the latest dev BLEU) may end training at a
    checkpoint boundary.  Checkpoints go to ``save_dir`` as
    ``ckpt-<step>.ckpt`` plus ``best.ckpt`` ranked by dev BLEU.
    """
    from .checkpoint import save_checkpoint

    os.makedirs(save_dir, exist_ok=True)
    config = model.config
    batches: list = []
    batches_per_epoch = max(1, -(-len(train_corpus) // config.batch_size))
    best_bleu, best_step = -1.0, -1
    best_path = os.path.join(save_dir, "best.ckpt")

    step = model.store.step
    while step < config.steps:
        step += 1
        epoch, offset = divmod(step - 1, batches_per_epoch)
        if offset == 0 or not batches:
            batches = make_batches(train_corpus, config.batch_size,
                                   shuffle_seed=_epoch_shuffle_seed(config.seed, epoch))
        loss = model.train_step(batches[offset], step)

        dev_loss_text = dev_bleu_text = "-"
        at_save_point = step % config.save_every == 0 or step == config.steps
        latest_bleu = None
        if at_save_point:
            if dev_corpus is not None:
                d_loss = dev_loss(model, dev_corpus)
                latest_bleu = dev_greedy_bleu(model, dev_corpus)
                dev_loss_text, dev_bleu_text = repr(d_loss), f"{latest_bleu:.2f}"
            save_checkpoint(os.path.join(save_dir, f"ckpt-{step}.ckpt"), model)
            if latest_bleu is not None and latest_bleu > best_bleu:
                best_bleu, best_step = latest_bleu, step
                save_checkpoint(best_path, model)
        log_line(f"{step}\t{loss!r}\t{dev_loss_text}\t{dev_bleu_text}")
        if at_save_point and stop_early and latest_bleu is not None and stop_early(latest_bleu):
            break
    return TrainOutcome(step, best_step, best_bleu, best_path)
