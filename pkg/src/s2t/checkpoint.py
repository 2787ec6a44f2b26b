"""Self-describing binary checkpoints.

Layout: magic ``S2TCKPT1``, a version word, a key=value text header
(config snapshot plus the optimizer step), optional vocabulary and
feature-stat sections, then named parameter records with float32 values
and Adam moments, sorted by name.

Saving quantizes the live parameter store to float32 first, so the file is
the canonical state: a run that keeps training after a save and a run that
reloads the file continue from bit-identical parameters, which makes
training resumable with exact loss trajectories.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .audio import FeatureStats
from .autodiff import ParameterStore
from .config import config_from_lines
from .corpus import Vocabulary
from .model import Seq2SeqModel, parameter_shapes

MAGIC = b"S2TCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def quantize_store(store: ParameterStore) -> None:
    """Round parameters and Adam moments to float32 in place."""
    for name in store.names():
        store.set_value(name, store.value(name).astype(np.float32).astype(np.float64))
        m1, m2 = store.moments(name)
        store.set_moments(name,
                          m1.astype(np.float32).astype(np.float64),
                          m2.astype(np.float32).astype(np.float64))


def _text_block(text: str) -> bytes:
    blob = text.encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def save_checkpoint(path, model: Seq2SeqModel) -> None:
    store = model.store
    quantize_store(store)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        header = "\n".join(model.config.to_lines() + [f"step={store.step}"])
        fh.write(_text_block(header))

        fh.write(struct.pack("<B", 1 if model.src_vocab is not None else 0))
        if model.src_vocab is not None:
            fh.write(_text_block("\n".join(model.src_vocab.tokens())))
        fh.write(_text_block("\n".join(model.tgt_vocab.tokens())))

        fh.write(struct.pack("<B", 1 if model.feat_stats is not None else 0))
        if model.feat_stats is not None:
            dim = model.feat_stats.mean.shape[0]
            fh.write(struct.pack("<I", dim))
            fh.write(model.feat_stats.mean.astype("<f8").tobytes())
            fh.write(model.feat_stats.std.astype("<f8").tobytes())

        names = sorted(store.names())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            value = store.value(name)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            m1, m2 = store.moments(name)
            for arr in (value, m1, m2):
                fh.write(arr.astype("<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Seq2SeqModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob, path)
    if reader.take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unknown checkpoint format version {version}")

    header_lines = reader.text().splitlines()
    step = None
    config_lines = []
    for line in header_lines:
        if line.startswith("step="):
            step = int(line[5:])
        else:
            config_lines.append(line)
    if step is None:
        raise CheckpointError(f"{path}: header is missing the step counter")
    config = config_from_lines(config_lines).resolved()

    src_vocab = None
    if reader.u8():
        src_vocab = Vocabulary.from_tokens(reader.text().split("\n"))
    tgt_vocab = Vocabulary.from_tokens(reader.text().split("\n"))
    feat_stats: Optional[FeatureStats] = None
    if reader.u8():
        dim = reader.u32()
        mean = np.frombuffer(reader.take(8 * dim), dtype="<f8").copy()
        std = np.frombuffer(reader.take(8 * dim), dtype="<f8").copy()
        feat_stats = FeatureStats(mean, std)

    store = ParameterStore()
    for _ in range(reader.u32()):
        name = reader.take(reader.u16()).decode("utf-8")
        ndim = reader.u8()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays = []
        for _ in range(3):
            arr = np.frombuffer(reader.take(4 * count), dtype="<f4")
            arrays.append(arr.astype(np.float64).reshape(shape))
        store.add(name, arrays[0])
        store.set_moments(name, arrays[1], arrays[2])
    store.step = step
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")

    expected = parameter_shapes(config, len(src_vocab) if src_vocab else None, len(tgt_vocab))
    actual = {name: store.value(name).shape for name in store.names()}
    if actual != {name: tuple(shape) for name, shape in expected.items()}:
        missing = sorted(set(expected) ^ set(actual))
        raise CheckpointError(
            f"{path}: parameter set does not match the stored architecture"
            + (f" (mismatched names: {missing[:4]})" if missing else " (shape mismatch)")
        )
    return Seq2SeqModel(config, store, src_vocab, tgt_vocab, feat_stats)
