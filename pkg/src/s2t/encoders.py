"""LSTM cell, bidirectional layers, and the text / speech encoder stacks.

The text encoder is two stacked bidirectional layers.  The speech encoder
adds a two-layer tanh prenet over the 41-dim feature frames and a third
bidirectional layer; its 2nd and 3rd layers read every other output of the
layer below, shortening the sequence by 4x overall.

All functions operate on batched tensors ([B, dim] per time step) and take
an optional per-row length vector; rows shorter than the padded extent
carry their last real state forward, which makes batched results identical
to per-sequence computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LstmCellParams:
    """Gate order along the first axis: input, forget, candidate, output."""

    wx: Tensor  # [4m, input_dim]
    wh: Tensor  # [4m, m]
    b: Tensor   # [4m]

    @property
    def units(self) -> int:
        return self.wh.shape[1]


@dataclass
class EncoderConfig:
    kind: str                      # "text" | "speech"
    layer_count: int
    units: int
    subsample_layers: frozenset    # 1-based indices of layers reading every other input
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind == "text" and self.subsample_layers:
            raise ValueError("text encoder does not subsample")


def text_encoder_config(units: int, layer_count: int = 2, dropout: float = 0.0) -> EncoderConfig:
    return EncoderConfig("text", layer_count, units, frozenset(), dropout)


def speech_encoder_config(units: int, layer_count: int = 3, dropout: float = 0.0) -> EncoderConfig:
    # the 2nd and 3rd layers read every other output from the layer below
    return EncoderConfig("speech", layer_count, units, frozenset(range(2, layer_count + 1)), dropout)


def _step(wx_t: Tensor, wh_t: Tensor, b: Tensor, x: Tensor, c: Tensor, h: Tensor):
    m = c.shape[-1]
    gates = (x @ wx_t) + (h @ wh_t) + b
    i = ad.sigmoid(ad.slice_axis(gates, -1, 0, m))
    f = ad.sigmoid(ad.slice_axis(gates, -1, m, 2 * m))
    g = ad.tanh(ad.slice_axis(gates, -1, 2 * m, 3 * m))
    o = ad.sigmoid(ad.slice_axis(gates, -1, 3 * m, 4 * m))
    c_new = (f * c) + (i * g)
    h_new = o * ad.tanh(c_new)
    return c_new, h_new


def lstm_cell_step(params: LstmCellParams, x: Tensor, state: tuple[Tensor, Tensor]):
    """One LSTM transition; ``x`` is [B, input_dim], state tensors are [B, m]."""
    c, h = state
    if x.shape[-1] != params.wx.shape[1]:
        raise ad.ShapeMismatch(
            f"lstm: input dim {x.shape[-1]} != expected {params.wx.shape[1]}"
        )
    return _step(ad.transpose(params.wx), ad.transpose(params.wh), params.b, x, c, h)


def _run_direction(params: LstmCellParams, inputs, order, carry_masks):
    batch = inputs[0].shape[0]
    m = params.units
    wx_t, wh_t, b = ad.transpose(params.wx), ad.transpose(params.wh), params.b
    c = Tensor(np.zeros((batch, m)))
    h = Tensor(np.zeros((batch, m)))
    outputs = [None] * len(inputs)
    for t in order:
        c_new, h_new = _step(wx_t, wh_t, b, inputs[t], c, h)
        if carry_masks is not None and carry_masks[t] is not None:
            keep, hold = carry_masks[t]
            c = (c_new * keep) + (c * hold)
            h = (h_new * keep) + (h * hold)
        else:
            c, h = c_new, h_new
        outputs[t] = h
    return outputs, c, h


def _carry_masks(lengths: Optional[np.ndarray], steps: int, batch: int):
    # per-step (keep, hold) multipliers; None where every row is live
    if lengths is None:
        return None
    masks = []
    for t in range(steps):
        live = (lengths > t).astype(np.float64)[:, None]
        masks.append(None if live.all() else (Tensor(live), Tensor(1.0 - live)))
    return masks


def bidirectional_layer(
    fwd: LstmCellParams,
    bwd: LstmCellParams,
    inputs: Sequence[Tensor],
    lengths: Optional[np.ndarray] = None,
):
    """Runs both directions and sums their per-position outputs.

    Returns (outputs, final_forward_state) where outputs keep the layer
    width m and the final state is the forward direction's (c, h)
    concatenation, frozen per row at its true length.
    """
    if len(inputs) == 0:
        raise ValueError("bidirectional layer needs a nonempty input sequence")
    masks = _carry_masks(lengths, len(inputs), inputs[0].shape[0])
    fwd_out, fwd_c, fwd_h = _run_direction(fwd, inputs, range(len(inputs)), masks)
    bwd_out, _, _ = _run_direction(bwd, inputs, range(len(inputs) - 1, -1, -1), masks)
    outputs = [f + b for f, b in zip(fwd_out, bwd_out)]
    return outputs, ad.concat([fwd_c, fwd_h])


def speech_prenet(layers: Sequence[tuple[Tensor, Tensor]], frames: Tensor) -> Tensor:
    """Two fully connected tanh layers applied to feature frames.

    ``frames`` may be a single vector, a [B, 41] batch or an [S, B, 41]
    block; weights are [out, in] matrices.
    """
    out = frames
    for w, b in layers:
        if out.shape[-1] != w.shape[1]:
            raise ad.ShapeMismatch(f"prenet: input dim {out.shape[-1]} != expected {w.shape[1]}")
        out = ad.tanh((out @ ad.transpose(w)) + b)
    return out


def subsampled_length(length: int, subsample_count: int = 2) -> int:
    """Length after ``subsample_count`` rounds of keeping indices 0, 2, 4, ..."""
    for _ in range(subsample_count):
        length = (length + 1) // 2
    return length


def pyramidal_encode(
    config: EncoderConfig,
    layers: Sequence[tuple[LstmCellParams, LstmCellParams]],
    inputs: Sequence[Tensor],
    lengths: Optional[np.ndarray] = None,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Stack bidirectional layers; subsampling layers read every other output
    of the layer below.  Inter-layer dropout applies during training only.

    Returns (outputs, final_state, out_lengths).
    """
    if len(layers) != config.layer_count:
        raise ValueError(f"expected {config.layer_count} layers, got {len(layers)}")
    min_len = 2 ** sum(1 for i in range(1, config.layer_count + 1) if i in config.subsample_layers)
    if len(inputs) < min_len:
        raise ValueError(f"input too short: {len(inputs)} steps, need at least {min_len}")

    seq = list(inputs)
    seq_lengths = None if lengths is None else np.asarray(lengths)
    final = None
    for index, (fwd, bwd) in enumerate(layers, start=1):
        if index in config.subsample_layers:
            seq = seq[0::2]
            if seq_lengths is not None:
                seq_lengths = (seq_lengths + 1) // 2
        if index > 1 and train and config.dropout > 0.0:
            scale = 1.0 / (1.0 - config.dropout)
            seq = [ad.dropout(x, (rng.random(x.shape) >= config.dropout) * scale) for x in seq]
        seq, final = bidirectional_layer(fwd, bwd, seq, seq_lengths)
    return seq, final, seq_lengths
