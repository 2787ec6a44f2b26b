"""The attention decoder and the full sequence-to-sequence model.

A decoder step embeds the previous target token, advances the two LSTM
layers, attends over the encoder outputs with the new top-layer state
(the cell/hidden concatenation), projects the LSTM output joined with the
attention context, and emits a softmax distribution over the target
vocabulary.  Training is teacher-forced cross entropy normalized per real
target token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, additive_scores, attend, convolutional_scores, project_encoder
from .autodiff import ParameterStore, Tape, Tensor, adam_update, backprop
from .config import RunConfig
from .corpus import make_batch
from .encoders import (
    EncoderConfig,
    LstmCellParams,
    _step as _lstm_gate_step,
    pyramidal_encode,
    speech_encoder_config,
    speech_prenet,
    text_encoder_config,
)


class DivergenceError(ArithmeticError):
    """Training loss became non-finite."""


@dataclass
class DecoderState:
    """Per-layer (cell, hidden) pairs plus the previous attention weights."""

    layers: list[tuple[Tensor, Tensor]]
    attn_weights: Optional[Tensor] = None

    @property
    def batch(self) -> int:
        return self.layers[0][0].shape[0]


def parameter_shapes(config: RunConfig, src_vocab_size: Optional[int], tgt_vocab_size: int) -> dict:
    """Every named parameter with its shape, as implied by the configuration."""
    cfg = config.resolved()
    m, n = cfg.hidden_size, cfg.embed_size
    shapes: dict[str, tuple] = {}
    if cfg.task == "text":
        if src_vocab_size is None:
            raise ValueError("text task needs a source vocabulary size")
        shapes["src_embed"] = (n, src_vocab_size)
        enc_input = n
    else:
        p = cfg.prenet_size
        shapes["prenet.0.w"] = (p, cfg.feature_dim)
        shapes["prenet.0.b"] = (p,)
        shapes["prenet.1.w"] = (p, p)
        shapes["prenet.1.b"] = (p,)
        enc_input = p
    for layer in range(cfg.enc_layers):
        d = enc_input if layer == 0 else m
        for direction in ("fwd", "bwd"):
            shapes[f"enc.{layer}.{direction}.wx"] = (4 * m, d)
            shapes[f"enc.{layer}.{direction}.wh"] = (4 * m, m)
            shapes[f"enc.{layer}.{direction}.b"] = (4 * m,)
    shapes["dec.embed"] = (n, tgt_vocab_size)
    shapes["dec.init_w"] = (2 * m, 2 * m)
    for layer in range(cfg.dec_layers):
        d = n if layer == 0 else m
        shapes[f"dec.{layer}.wx"] = (4 * m, d)
        shapes[f"dec.{layer}.wh"] = (4 * m, m)
        shapes[f"dec.{layer}.b"] = (4 * m,)
    shapes["dec.merge_w"] = (m, 2 * m)
    shapes["dec.merge_b"] = (m,)
    shapes["dec.vocab_w"] = (tgt_vocab_size, m)
    shapes["dec.vocab_b"] = (tgt_vocab_size,)
    shapes["attn.enc_w"] = (m, m)
    shapes["attn.state_w"] = (m, 2 * m)
    shapes["attn.bias"] = (m,)
    shapes["attn.score_v"] = (m,)
    if cfg.attention == "conv":
        shapes["attn.conv_gate"] = (m,)
        shapes["attn.conv_filter"] = (cfg.conv_filter_size,)
    return shapes


def init_parameters(store: ParameterStore, shapes: dict, hidden_size: int, seed: int) -> None:
    """Glorot-uniform matrices; zero biases except LSTM forget gates at 1."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    m = hidden_size
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith((".b", "_b", "bias")):
            value = np.zeros(shape)
            if name.endswith(".b") and name[:-2] + ".wx" in shapes:
                value[m:2 * m] = 1.0  # LSTM gate bias: forget gate starts open
        elif len(shape) == 1:
            limit = np.sqrt(6.0 / (shape[0] + 1))
            value = rng.uniform(-limit, limit, shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, shape)
        store.add(name, value)


class Seq2SeqModel:
    """Configuration, parameters and vocabularies bundled with the forward,
    loss and training-step logic."""

    def __init__(self, config: RunConfig, store: ParameterStore,
                 src_vocab=None, tgt_vocab=None, feat_stats=None):
        self.config = config.resolved()
        self.store = store
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.feat_stats = feat_stats

    @classmethod
    def build(cls, config: RunConfig, src_vocab=None, tgt_vocab=None, feat_stats=None) -> "Seq2SeqModel":
        cfg = config.resolved()
        src_size = len(src_vocab) if src_vocab is not None else None
        shapes = parameter_shapes(cfg, src_size, len(tgt_vocab))
        store = ParameterStore()
        init_parameters(store, shapes, cfg.hidden_size, cfg.seed)
        return cls(cfg, store, src_vocab, tgt_vocab, feat_stats)

    # --- assembly helpers ---

    def encoder_config(self) -> EncoderConfig:
        cfg = self.config
        if cfg.task == "text":
            return text_encoder_config(cfg.hidden_size, cfg.enc_layers, cfg.dropout)
        return speech_encoder_config(cfg.hidden_size, cfg.enc_layers, cfg.dropout)

    def _encoder_cells(self, tensors) -> list:
        cells = []
        for layer in range(self.config.enc_layers):
            pair = []
            for direction in ("fwd", "bwd"):
                prefix = f"enc.{layer}.{direction}"
                pair.append(LstmCellParams(tensors[f"{prefix}.wx"], tensors[f"{prefix}.wh"],
                                           tensors[f"{prefix}.b"]))
            cells.append(tuple(pair))
        return cells

    def attention_params(self, tensors) -> AttentionParams:
        conv = self.config.attention == "conv"
        return AttentionParams(
            enc_w=tensors["attn.enc_w"],
            state_w=tensors["attn.state_w"],
            bias=tensors["attn.bias"],
            score_v=tensors["attn.score_v"],
            conv_gate=tensors["attn.conv_gate"] if conv else None,
            conv_filter=tensors["attn.conv_filter"] if conv else None,
        )

    # --- forward passes ---

    def encode(self, tensors, src_block: np.ndarray, lengths: np.ndarray,
               train: bool = False, rng=None):
        """Returns (h [A', B, m], encoder mask [B, A'], final state [B, 2m])."""
        cfg = self.config
        lengths = np.asarray(lengths)
        if cfg.task == "text":
            steps = src_block.shape[1]
            inputs = [ad.embedding(tensors["src_embed"], src_block[:, t]) for t in range(steps)]
        else:
            frames = Tensor(np.ascontiguousarray(np.swapaxes(src_block, 0, 1)))  # [S, B, D]
            layers = [(tensors["prenet.0.w"], tensors["prenet.0.b"]),
                      (tensors["prenet.1.w"], tensors["prenet.1.b"])]
            projected = speech_prenet(layers, frames)
            steps, batch = src_block.shape[1], src_block.shape[0]
            inputs = [ad.reshape(ad.slice_axis(projected, 0, t, t + 1), (batch, cfg.prenet_size))
                      for t in range(steps)]
        outputs, final, out_lengths = pyramidal_encode(
            self.encoder_config(), self._encoder_cells(tensors), inputs,
            lengths, train=train, rng=rng,
        )
        if out_lengths is None:
            out_lengths = np.full(src_block.shape[0], len(outputs), dtype=np.int64)
        h = ad.stack(outputs)
        enc_mask = np.arange(len(outputs))[None, :] < out_lengths[:, None]
        return h, enc_mask, final

    def decoder(self, tensors, h: Tensor, enc_mask: np.ndarray,
                train: bool = False, rng=None) -> "DecoderCore":
        return DecoderCore(self, tensors, h, enc_mask, train, rng)

    def batch_nll(self, tensors, batch, train: bool = False, rng=None,
                  collect_attention: bool = False):
        """Teacher-forced negative log likelihood, averaged over the real
        target tokens in the batch."""
        if batch.dec_in.shape[1] == 0:
            raise ValueError("empty target")
        h, enc_mask, final = self.encode(tensors, batch.src, batch.src_lengths, train, rng)
        core = self.decoder(tensors, h, enc_mask, train, rng)
        state = core.init_state(final)
        total = None
        attn_rows = []
        for t in range(batch.dec_in.shape[1]):
            state, dist, weights = core.step(state, batch.dec_in[:, t])
            if collect_attention:
                attn_rows.append(weights)
            logp = ad.log(ad.pick(dist, batch.dec_out[:, t]))
            term = logp * Tensor(batch.tgt_mask[:, t])
            total = term if total is None else total + term
        loss = ad.tsum(total).scaled(-1.0 / batch.real_token_count)
        return (loss, attn_rows) if collect_attention else loss

    def sequence_nll(self, source, target) -> float:
        """Loss for a single (source, target) pair, dropout off."""
        if len(target) == 0:
            raise ValueError("empty target")
        batch = make_batch([source], [list(target)])
        return self.batch_nll(self.store.as_tensors(), batch).item()

    def train_step(self, batch, step_index: int) -> float:
        """One optimizer step; returns the pre-update loss.

        Dropout masks are seeded from (seed, step_index) so an interrupted
        run can resume bit-exactly.
        """
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, step_index]))
        tape = Tape()
        with tape:
            tensors = self.store.watch(tape)
            loss = self.batch_nll(tensors, batch, train=True, rng=rng)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step_index}")
        grads = backprop(tape, loss)
        adam_update(self.store, grads, self.config.learning_rate)
        return value

    def max_decode_length(self, encoder_positions: int, source_len: int) -> int:
        if self.config.task == "text":
            return 2 * source_len + 10
        return 2 * encoder_positions + 10


class DecoderCore:
    """Per-pass decoder: pre-transposed weights, the projected encoder block
    and the attention configuration for one source batch."""

    def __init__(self, model: Seq2SeqModel, tensors, h: Tensor, enc_mask: np.ndarray,
                 train: bool = False, rng=None):
        cfg = model.config
        self.config = cfg
        self.h = h
        self.enc_mask = np.asarray(enc_mask, dtype=bool)
        self.train = train
        self.rng = rng
        self.embed = tensors["dec.embed"]
        self.init_w_t = ad.transpose(tensors["dec.init_w"])
        self.cells = []
        for layer in range(cfg.dec_layers):
            self.cells.append((
                ad.transpose(tensors[f"dec.{layer}.wx"]),
                ad.transpose(tensors[f"dec.{layer}.wh"]),
                tensors[f"dec.{layer}.b"],
            ))
        self.merge_w_t = ad.transpose(tensors["dec.merge_w"])
        self.merge_b = tensors["dec.merge_b"]
        self.vocab_w_t = ad.transpose(tensors["dec.vocab_w"])
        self.vocab_b = tensors["dec.vocab_b"]
        self.attn = model.attention_params(tensors)
        self.enc_proj = project_encoder(self.attn, h)

    @property
    def positions(self) -> int:
        return self.h.shape[0]

    def init_state(self, enc_final: Tensor) -> DecoderState:
        """s0 = tanh(init_w . final) becomes the top layer's (cell, hidden);
        lower layers start at zero, the attention history starts empty."""
        m = self.config.hidden_size
        s0 = ad.tanh(enc_final @ self.init_w_t)
        batch = s0.shape[0]
        zeros = Tensor(np.zeros((batch, m)))
        layers = [(zeros, zeros) for _ in range(self.config.dec_layers - 1)]
        layers.append((ad.slice_axis(s0, -1, 0, m), ad.slice_axis(s0, -1, m, 2 * m)))
        return DecoderState(layers=layers, attn_weights=None)

    def step(self, state: DecoderState, prev_ids: np.ndarray):
        """Advance one target position; returns (state', distribution [B, V],
        attention weights [B, A'])."""
        cfg = self.config
        x = ad.embedding(self.embed, prev_ids)
        new_layers = []
        for layer, (wx_t, wh_t, b) in enumerate(self.cells):
            c, hidden = state.layers[layer]
            c_new, h_new = _lstm_gate_step(wx_t, wh_t, b, x, c, hidden)
            new_layers.append((c_new, h_new))
            x = h_new
            if layer < len(self.cells) - 1 and self.train and cfg.dropout > 0.0:
                scale = 1.0 / (1.0 - cfg.dropout)
                x = ad.dropout(x, (self.rng.random(x.shape) >= cfg.dropout) * scale)
        top_c, top_h = new_layers[-1]
        s_t = ad.concat([top_c, top_h])
        if cfg.attention == "conv":
            scores = convolutional_scores(self.attn, self.h, s_t, state.attn_weights, self.enc_proj)
        else:
            scores = additive_scores(self.attn, self.h, s_t, self.enc_proj)
        mask = self.enc_mask
        if mask.shape[0] != scores.shape[0]:  # beams share one encoded source
            mask = np.broadcast_to(mask, scores.shape)
        weights, context = attend(scores, self.h, mask)
        projected = (ad.concat([top_h, context]) @ self.merge_w_t) + self.merge_b
        dist = ad.softmax((projected @ self.vocab_w_t) + self.vocab_b)
        return DecoderState(layers=new_layers, attn_weights=weights), dist, weights


def gather_state(state: DecoderState, index: np.ndarray) -> DecoderState:
    """Reorder the batch dimension of a decoder state (beam bookkeeping)."""
    layers = [(Tensor(c.data[index]), Tensor(h.data[index])) for c, h in state.layers]
    attn = None if state.attn_weights is None else Tensor(state.attn_weights.data[index])
    return DecoderState(layers=layers, attn_weights=attn)
