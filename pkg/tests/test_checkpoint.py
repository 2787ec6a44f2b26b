import numpy as np
import pytest

from s2t.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from s2t.corpus import ParallelCorpus
from s2t.training import train_loop

from util import build_tiny_model


def test_save_load_save_is_byte_identical(tmp_path):
    model = build_tiny_model(task="text", m=3, n=3, seed=42)
    model.store.step = 17
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, model)
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()


def test_load_restores_everything(tmp_path):
    model = build_tiny_model(task="speech", m=3, n=3, seed=7)
    model.store.step = 5
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)  # quantizes the live store
    loaded = load_checkpoint(path)
    assert loaded.store.step == 5
    assert loaded.config == model.config
    assert loaded.tgt_vocab == model.tgt_vocab
    np.testing.assert_array_equal(loaded.feat_stats.mean, model.feat_stats.mean)
    for name in model.store.names():
        np.testing.assert_array_equal(loaded.store.value(name), model.store.value(name))
        for got, want in zip(loaded.store.moments(name), model.store.moments(name)):
            np.testing.assert_array_equal(got, want)


def test_save_quantizes_live_store_to_float32(tmp_path):
    model = build_tiny_model(m=3)
    save_checkpoint(tmp_path / "m.ckpt", model)
    for name in model.store.names():
        value = model.store.value(name)
        np.testing.assert_array_equal(value, value.astype(np.float32).astype(np.float64))


def test_rejects_unknown_version(tmp_path):
    model = build_tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    blob = bytearray(path.read_bytes())
    blob[8] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    model = build_tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 20])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_rejects_architecture_mismatch(tmp_path):
    model = build_tiny_model()
    model.store.add("bogus.extra", np.zeros(3))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    with pytest.raises(CheckpointError, match="architecture"):
        load_checkpoint(path)


def _toy_corpus(rng, n=12, vocab=6):
    sources = [list(rng.integers(4, 4 + vocab, rng.integers(2, 5))) for _ in range(n)]
    targets = [list(reversed(s)) for s in sources]
    return ParallelCorpus(sources, targets)


def test_resume_matches_uninterrupted_run(tmp_path):
    rng = np.random.default_rng(90)
    corpus = _toy_corpus(rng)

    def drive(model, save_dir):
        lines = []
        train_loop(model, corpus, None, str(save_dir), lines.append)
        return lines

    # uninterrupted run: 12 steps with a checkpoint every 4 (dropout active)
    full_model = build_tiny_model(m=4, n=4, src_words=6, tgt_words=6, seed=11,
                                  dropout=0.5, steps=12, save_every=4, batch_size=4)
    full_lines = drive(full_model, tmp_path / "full")

    # interrupted run: 8 steps, then resume from the step-8 checkpoint
    part_model = build_tiny_model(m=4, n=4, src_words=6, tgt_words=6, seed=11,
                                  dropout=0.5, steps=8, save_every=4, batch_size=4)
    part_lines = drive(part_model, tmp_path / "part")
    resumed = load_checkpoint(tmp_path / "part" / "ckpt-8.ckpt")
    assert resumed.store.step == 8
    resumed.config.steps = 12
    resumed_lines = drive(resumed, tmp_path / "resumed")

    assert part_lines == full_lines[:8]
    assert resumed_lines == full_lines[8:]
