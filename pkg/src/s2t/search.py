"""Greedy decoding, beam search, shallow language-model fusion and
log-linear ensembles of independently trained models.

All tie-breaking prefers the lowest token id, so every decode is
bit-reproducible and beam size 1 reproduces the greedy decoder exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID
from .lm import TrigramModel, fused_log_rows, lm_logprob, vocabulary_id_map
from .model import DecoderState, Seq2SeqModel, gather_state


@dataclass
class FusionWeights:
    """Per-model log-linear weights (uniform 1/J when omitted) plus a
    nonnegative language-model weight."""

    model_weights: Optional[list[float]] = None
    lm_weight: float = 0.2

    def resolve(self, n_models: int) -> list[float]:
        if self.model_weights is None:
            return [1.0 / n_models] * n_models
        if len(self.model_weights) != n_models:
            raise ValueError(
                f"{len(self.model_weights)} model weights for {n_models} models"
            )
        if any(w <= 0 for w in self.model_weights):
            raise ValueError("model weights must be positive")
        if self.lm_weight < 0:
            raise ValueError("lm weight must be nonnegative")
        return list(self.model_weights)


@dataclass
class Hypothesis:
    """BOS-rooted partial output with its cumulative fused log score."""

    tokens: tuple[int, ...]
    score: float
    states: list[DecoderState]
    attention: list[np.ndarray]
    finished: bool = False

    @property
    def content(self) -> list[int]:
        out = list(self.tokens[1:])
        if self.finished:
            out = out[:-1]
        return out


@dataclass
class DecodeResult:
    tokens: list[int]          # content token ids (no BOS/EOS)
    attention: np.ndarray      # one row per emitted content token, [T, A']
    score: float
    finished: bool = True      # EOS reached before the length cap


def _prepare(model: Seq2SeqModel, source):
    src = np.asarray(source)
    block = src[None, :] if model.config.task == "text" else src[None, :, :]
    lengths = np.array([block.shape[1]])
    tensors = model.store.as_tensors()
    h, enc_mask, final = model.encode(tensors, block, lengths)
    core = model.decoder(tensors, h, enc_mask)
    return core, final


def _default_max_len(model: Seq2SeqModel, core, source) -> int:
    return model.max_decode_length(core.positions, len(source))


def greedy_decode(model: Seq2SeqModel, source, max_len: Optional[int] = None) -> DecodeResult:
    """Argmax token per step (ties to the lowest id); stops at EOS or
    ``max_len``.  Attention rows cover the emitted content tokens."""
    if len(source) == 0:
        raise ValueError("source is empty")
    core, final = _prepare(model, source)
    if max_len is None:
        max_len = _default_max_len(model, core, source)
    state = core.init_state(final)
    prev = BOS_ID
    tokens: list[int] = []
    rows: list[np.ndarray] = []
    score = 0.0
    finished = False
    for _ in range(max_len + 1):
        state, dist, weights = core.step(state, np.array([prev]))
        token = int(np.argmax(dist.data[0]))
        score += float(np.log(dist.data[0, token]))
        if token == EOS_ID:
            finished = True
            break
        tokens.append(token)
        rows.append(weights.data[0].copy())
        prev = token
        if len(tokens) >= max_len:
            break
    attention = np.vstack(rows) if rows else np.zeros((0, core.positions))
    return DecodeResult(tokens, attention, score, finished)


def _lm_context(tokens: tuple[int, ...]) -> tuple[int, int]:
    padded = (BOS_ID, BOS_ID) + tokens[1:]  # skip the BOS root, re-pad
    return padded[-2], padded[-1]


def beam_search(
    models: Sequence[Seq2SeqModel],
    source,
    beam_size: int = 8,
    lm: Optional[TrigramModel] = None,
    weights: Optional[FusionWeights] = None,
    max_len: Optional[int] = None,
    length_norm: bool = False,
    rescore_only: bool = False,
) -> DecodeResult:
    """Breadth-limited search over the fused per-step distribution
    sum_j w_j ln p_j(w|.) + lm_weight * ln p_lm(w | last two tokens).

    Finished hypotheses retire to a completed pool; the winner is the
    completed hypothesis with the highest cumulative score (per-token
    normalized when ``length_norm``), falling back to the best live
    hypothesis if nothing finished.  With ``rescore_only`` the language
    model is applied to the completed pool instead of during expansion.
    """
    if len(models) == 0:
        raise ValueError("beam search needs at least one model")
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    if len(source) == 0:
        raise ValueError("source is empty")
    weights = weights or FusionWeights(lm_weight=0.0)
    model_weights = weights.resolve(len(models))
    fuse_lm = lm is not None and weights.lm_weight > 0.0 and not rescore_only
    id_map = vocabulary_id_map(lm, models[0].tgt_vocab) if lm is not None else None

    cores = []
    finals = []
    for model in models:
        core, final = _prepare(model, source)
        cores.append(core)
        finals.append(final)
    if max_len is None:
        max_len = _default_max_len(models[0], cores[0], source)

    live = [Hypothesis(tokens=(BOS_ID,), score=0.0,
                       states=[core.init_state(final) for core, final in zip(cores, finals)],
                       attention=[])]
    completed: list[Hypothesis] = []
    overlong: list[Hypothesis] = []

    while live:
        k = len(live)
        prev_ids = np.array([hyp.tokens[-1] for hyp in live])
        batched = [_stack_states(model_states) for model_states in zip(*(h.states for h in live))]
        fused = np.zeros((k, len(models[0].tgt_vocab)))
        new_states = []
        weight_rows = None
        for j, core in enumerate(cores):
            state, dist, attn = core.step(batched[j], prev_ids)
            new_states.append(state)
            fused += model_weights[j] * np.log(dist.data)
            if j == 0:
                weight_rows = attn.data
        if fuse_lm:
            for i, hyp in enumerate(live):
                u, v = _lm_context(hyp.tokens)
                fused[i] += weights.lm_weight * fused_log_rows(lm, id_map, u, v)

        scores = np.array([h.score for h in live])[:, None] + fused
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")[: beam_size]

        next_live = []
        parents = []
        for flat_idx in order:
            parent, token = divmod(int(flat_idx), fused.shape[1])
            hyp = live[parent]
            new = Hypothesis(
                tokens=hyp.tokens + (token,),
                score=float(flat[flat_idx]),
                states=[],
                attention=hyp.attention if token == EOS_ID
                else hyp.attention + [weight_rows[parent].copy()],
                finished=token == EOS_ID,
            )
            if new.finished:
                completed.append(new)
            elif len(new.tokens) - 1 >= max_len:
                overlong.append(new)
            else:
                next_live.append(new)
                parents.append(parent)
        for hyp, parent in zip(next_live, parents):
            hyp.states = [_row_state(state, parent) for state in new_states]
        live = next_live

    pool = completed if completed else overlong
    best = max(pool, key=lambda h: (_rank_score(h, lm, id_map, weights, rescore_only, length_norm),
                                    [-t for t in h.tokens]))
    attention = (np.vstack(best.attention) if best.attention
                 else np.zeros((0, cores[0].positions)))
    return DecodeResult(best.content, attention, best.score, best.finished)


def _rank_score(hyp: Hypothesis, lm, id_map, weights, rescore_only: bool, length_norm: bool) -> float:
    score = hyp.score
    if rescore_only and lm is not None and weights.lm_weight > 0.0:
        ids = [int(id_map[t]) for t in hyp.content]
        lm_score = lm_logprob(lm, ids) if ids else lm.logprob(BOS_ID, BOS_ID, EOS_ID)
        score = score + weights.lm_weight * lm_score
    if length_norm:
        steps = len(hyp.content) + (1 if hyp.finished else 0)
        score = score / max(1, steps)
    return score


def _stack_states(states: Sequence[DecoderState]) -> DecoderState:
    from .autodiff import Tensor

    if len(states) == 1:
        return states[0]
    layers = []
    for layer in range(len(states[0].layers)):
        c = Tensor(np.concatenate([s.layers[layer][0].data for s in states], axis=0))
        h = Tensor(np.concatenate([s.layers[layer][1].data for s in states], axis=0))
        layers.append((c, h))
    attn = None
    if states[0].attn_weights is not None:
        attn = Tensor(np.concatenate([s.attn_weights.data for s in states], axis=0))
    return DecoderState(layers=layers, attn_weights=attn)


def _row_state(state: DecoderState, row: int) -> DecoderState:
    return gather_state(state, np.array([row]))
