"""Command-line surface: train, translate, evaluate, lm-train,
dump-attention and extract-features.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .audio import (
    ARCHIVE_MAGIC,
    AudioFormatError,
    FeatureSequence,
    compute_feature_stats,
    extract_features,
    load_pcm_wav,
    normalize_features,
    read_feature_archive,
    write_feature_archive,
)
from .bleu import corpus_bleu
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .corpus import ParallelCorpus, Vocabulary, read_lines, tokenize
from .lm import DEFAULT_LAMBDAS, load_lm, save_lm, train_trigram
from .model import DivergenceError, Seq2SeqModel
from .search import FusionWeights, beam_search, greedy_decode
from .training import train_loop


class UsageError(Exception):
    pass


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- corpus loading helpers ---


def _load_text_pairs(src_path, tgt_path):
    src_lines = read_lines(src_path)
    tgt_lines = read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line counts differ: {src_path} has {len(src_lines)}, {tgt_path} has {len(tgt_lines)}"
        )
    pairs = [(tokenize(s), tokenize(t)) for s, t in zip(src_lines, tgt_lines)]
    kept = [(s, t) for s, t in pairs if s and t]
    if len(kept) < len(pairs):
        print(f"dropped {len(pairs) - len(kept)} empty pair(s)", file=sys.stderr)
    if not kept:
        raise DataError(f"{src_path}: no usable training pairs")
    return kept


def _load_speech_pairs(archive_path, tgt_path, stats=None):
    items = read_feature_archive(archive_path)
    tgt_lines = read_lines(tgt_path)
    if len(items) != len(tgt_lines):
        raise DataError(
            f"{archive_path} has {len(items)} utterances but {tgt_path} has {len(tgt_lines)} lines"
        )
    pairs = []
    dropped = 0
    for (utt_id, frames), line in zip(items, tgt_lines):
        tokens = tokenize(line)
        if frames.shape[0] < 4 or not tokens:
            dropped += 1
            continue
        pairs.append((frames, tokens))
    if dropped:
        print(f"dropped {dropped} unusable utterance(s)", file=sys.stderr)
    if not pairs:
        raise DataError(f"{archive_path}: no usable training pairs")
    if stats is None:
        stats = compute_feature_stats([f for f, _ in pairs])
    pairs = [(normalize_features(FeatureSequence(f), stats).frames, t) for f, t in pairs]
    return pairs, stats


def _encode_corpus(pairs, src_vocab: Optional[Vocabulary], tgt_vocab: Vocabulary) -> ParallelCorpus:
    sources = [src_vocab.encode_sequence(s) if src_vocab else s for s, _ in pairs]
    targets = [tgt_vocab.encode_sequence(t) for _, t in pairs]
    return ParallelCorpus(sources, targets)


def _is_feature_archive(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == ARCHIVE_MAGIC


# --- commands ---


def cmd_train(args) -> int:
    overrides = {
        name: getattr(args, name)
        for name in ("task", "hidden_size", "embed_size", "dropout", "learning_rate",
                     "batch_size", "steps", "save_every", "seed", "max_vocab")
        if getattr(args, name) is not None
    }
    if args.resume:
        model = load_checkpoint(args.resume)
        config = model.config
        # schedule may be extended; everything else is pinned by the checkpoint
        if args.steps is not None:
            config.steps = args.steps
        if args.save_every is not None:
            config.save_every = args.save_every
        ignored = sorted(set(overrides) - {"steps", "save_every"})
        if ignored:
            print(f"resuming: ignoring {', '.join(ignored)} (the checkpoint config wins)",
                  file=sys.stderr)
    else:
        config = load_config(args.config) if args.config else RunConfig()
        for name, value in overrides.items():
            setattr(config, name, value)
        config = config.resolved()
        model = None

    if config.task == "text":
        train_pairs = _load_text_pairs(args.train_src, args.train_tgt)
        if model is None:
            src_vocab = Vocabulary.from_corpus([s for s, _ in train_pairs], config.max_vocab)
            tgt_vocab = Vocabulary.from_corpus([t for _, t in train_pairs], config.max_vocab)
            model = Seq2SeqModel.build(config, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
        train_corpus = _encode_corpus(train_pairs, model.src_vocab, model.tgt_vocab)
        dev_corpus = None
        if args.dev_src:
            dev_pairs = _load_text_pairs(args.dev_src, args.dev_tgt)
            dev_corpus = _encode_corpus(dev_pairs, model.src_vocab, model.tgt_vocab)
    else:
        train_pairs, stats = _load_speech_pairs(
            args.train_src, args.train_tgt,
            stats=model.feat_stats if model is not None else None)
        if model is None:
            tgt_vocab = Vocabulary.from_corpus([t for _, t in train_pairs], config.max_vocab)
            model = Seq2SeqModel.build(config, tgt_vocab=tgt_vocab, feat_stats=stats)
        train_corpus = _encode_corpus(train_pairs, None, model.tgt_vocab)
        dev_corpus = None
        if args.dev_src:
            dev_pairs, _ = _load_speech_pairs(args.dev_src, args.dev_tgt, stats=model.feat_stats)
            dev_corpus = _encode_corpus(dev_pairs, None, model.tgt_vocab)

    os.makedirs(args.save_dir, exist_ok=True)
    log_path = os.path.join(args.save_dir, "train.log")
    with open(log_path, "a" if args.resume else "w", encoding="utf-8") as log_fh:

        def log_line(text: str) -> None:
            log_fh.write(text + "\n")
            log_fh.flush()
            if not args.quiet:
                print(text)

        outcome = train_loop(model, train_corpus, dev_corpus, args.save_dir, log_line)
    if outcome.best_step >= 0 and not args.quiet:
        print(f"best dev BLEU {outcome.best_bleu:.2f} at step {outcome.best_step}", file=sys.stderr)
    return 0


def _load_ensemble(paths) -> list[Seq2SeqModel]:
    models = [load_checkpoint(path) for path in paths]
    first = models[0]
    for path, model in zip(paths[1:], models[1:]):
        if model.config.task != first.config.task:
            raise DataError(f"{path}: task kind differs between ensemble members")
        if model.tgt_vocab != first.tgt_vocab:
            raise DataError(f"{path}: target vocabulary differs between ensemble members")
        if (model.src_vocab is None) != (first.src_vocab is None) or (
                model.src_vocab is not None and model.src_vocab != first.src_vocab):
            raise DataError(f"{path}: source vocabulary differs between ensemble members")
    return models


def _read_sources(models, input_path):
    first = models[0]
    if first.config.task == "speech":
        if not _is_feature_archive(input_path):
            raise DataError(
                f"{input_path}: speech checkpoints need a feature archive input (S2TFEAT1)"
            )
        if first.feat_stats is None:
            raise DataError("checkpoint carries no feature-normalization stats")
        items = read_feature_archive(input_path)
        return [normalize_features(FeatureSequence(f), first.feat_stats).frames for _, f in items]
    if _is_feature_archive(input_path):
        raise DataError(f"{input_path}: text checkpoints cannot decode a feature archive")
    return [first.src_vocab.encode_sequence(tokenize(line)) for line in read_lines(input_path)]


def cmd_translate(args) -> int:
    models = _load_ensemble(args.checkpoint)
    lm = load_lm(args.lm) if args.lm else None
    weights = FusionWeights(model_weights=args.model_weight or None,
                            lm_weight=args.lm_weight if lm else 0.0)
    sources = _read_sources(models, args.input)

    lines = []
    for index, source in enumerate(sources):
        if len(source) == 0:
            lines.append("")
            continue
        try:
            result = beam_search(models, source, beam_size=args.beam_size, lm=lm,
                                 weights=weights, max_len=args.max_len,
                                 length_norm=args.length_norm, rescore_only=args.rescore_only)
        except ValueError as exc:
            print(f"input {index}: {exc}; emitting empty line", file=sys.stderr)
            lines.append("")
            continue
        lines.append(" ".join(models[0].tgt_vocab.decode_sequence(result.tokens)))

    text = "".join(line + "\n" for line in lines)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    hyp_lines = read_lines(args.hyp)
    ref_streams = []
    for path in args.ref:
        lines = read_lines(path)
        if len(lines) != len(hyp_lines):
            raise DataError(
                f"{path}: has {len(lines)} lines but {args.hyp} has {len(hyp_lines)}"
            )
        ref_streams.append(lines)
    hyps = [tokenize(line) for line in hyp_lines]
    refs = [[tokenize(stream[i]) for stream in ref_streams] for i in range(len(hyp_lines))]
    report = corpus_bleu(hyps, refs)
    precisions = "/".join(f"{100.0 * p:.2f}" for p in report.precisions)
    print(f"BLEU = {report.score:.2f}")
    print(f"precisions = {precisions}")
    print(f"brevity_penalty = {report.brevity_penalty:.4f}")
    print(f"length_ratio = {report.length_ratio:.3f} (hyp {report.hyp_length} / ref {report.ref_length})")
    return 0


def cmd_lm_train(args) -> int:
    corpus = [tokenize(line) for line in read_lines(args.corpus)]
    corpus = [tokens for tokens in corpus if tokens]
    model = train_trigram(corpus, lambdas=(args.lambda1, args.lambda2, args.lambda3))
    save_lm(args.output, model)
    print(f"trained trigram model on {len(corpus)} sentences, vocabulary {len(model.vocab)}")
    return 0


def _teacher_forced_attention(model, source, target_ids):
    from .corpus import make_batch

    batch = make_batch([source], [target_ids])
    _, rows = model.batch_nll(model.store.as_tensors(), batch, collect_attention=True)
    return np.vstack([row.data[0] for row in rows[:-1]])  # drop the EOS step


def cmd_dump_attention(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.config.task == "speech":
        if not _is_feature_archive(args.input):
            raise DataError(f"{args.input}: speech checkpoints need a feature archive input")
        if model.feat_stats is None:
            raise DataError("checkpoint carries no feature-normalization stats")
        items = read_feature_archive(args.input)
        if args.line >= len(items):
            raise DataError(f"{args.input}: utterance index {args.line} out of range")
        source = normalize_features(FeatureSequence(items[args.line][1]), model.feat_stats).frames
        source_labels = None
    else:
        if _is_feature_archive(args.input):
            raise DataError(f"{args.input}: text checkpoints cannot read a feature archive")
        lines = read_lines(args.input)
        if args.line >= len(lines):
            raise DataError(f"{args.input}: line {args.line} out of range")
        tokens = tokenize(lines[args.line])
        source = model.src_vocab.encode_sequence(tokens)
        source_labels = tokens

    if args.reference:
        ref_lines = read_lines(args.reference)
        if args.line >= len(ref_lines):
            raise DataError(f"{args.reference}: line {args.line} out of range")
        target_tokens = tokenize(ref_lines[args.line])
        target_ids = model.tgt_vocab.encode_sequence(target_tokens)
        matrix = _teacher_forced_attention(model, source, target_ids)
        row_labels = target_tokens
    else:
        result = greedy_decode(model, source)
        matrix = result.attention
        row_labels = model.tgt_vocab.decode_sequence(result.tokens)

    if source_labels is None:
        # speech positions are 4x subsampled: label with the first frame index
        source_labels = [str(4 * i) for i in range(matrix.shape[1])]
    elif matrix.shape[1] != len(source_labels):
        source_labels = [str(i) for i in range(matrix.shape[1])]
    out = ["token\t" + "\t".join(source_labels)]
    for label, row in zip(row_labels, matrix):
        out.append(label + "\t" + "\t".join(repr(float(v)) for v in row))
    text = "\n".join(out) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_extract_features(args) -> int:
    names = sorted(n for n in os.listdir(args.wav_dir) if n.lower().endswith(".wav"))
    if not names:
        raise DataError(f"{args.wav_dir}: no .wav files found")
    items = []
    for name in names:
        audio = load_pcm_wav(os.path.join(args.wav_dir, name))
        feats = extract_features(audio, window_ms=args.window_ms, hop_ms=args.hop_ms)
        items.append((os.path.splitext(name)[0], feats.frames.astype(np.float32)))
    write_feature_archive(args.output, items)
    print(f"wrote {len(items)} utterance(s) to {args.output}")
    return 0


# --- parser ---


def build_parser() -> _Parser:
    parser = _Parser(prog="s2t", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model with periodic checkpoints")
    p.add_argument("--task", choices=("text", "speech"))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--train-src", required=True, help="source text file or feature archive")
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--save-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--embed-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--save-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-vocab", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a text file or feature archive")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat for a log-linear ensemble")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam-size", type=int, default=8,
                   help="1 reproduces the greedy decoder exactly (default 8)")
    p.add_argument("--lm", help="trigram model file for shallow fusion")
    p.add_argument("--lm-weight", type=float, default=0.2)
    p.add_argument("--model-weight", action="append", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--length-norm", action="store_true")
    p.add_argument("--rescore-only", action="store_true",
                   help="apply the LM to finished hypotheses instead of during expansion")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="multi-reference corpus BLEU")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", action="append", required=True, help="repeat per reference stream")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lm-train", help="estimate the interpolated trigram model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lambda1", type=float, default=DEFAULT_LAMBDAS[0])
    p.add_argument("--lambda2", type=float, default=DEFAULT_LAMBDAS[1])
    p.add_argument("--lambda3", type=float, default=DEFAULT_LAMBDAS[2])
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("dump-attention", help="write one item's attention matrix as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--line", type=int, default=0)
    p.add_argument("--reference", help="teacher-force this reference file's matching line")
    p.add_argument("--output")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("extract-features", help="WAV directory to feature archive")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--window-ms", type=int, default=40)
    p.add_argument("--hop-ms", type=int, default=10)
    p.set_defaults(func=cmd_extract_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (DataError, CheckpointError, ConfigError, AudioFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
