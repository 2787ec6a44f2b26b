"""Corpus-level multi-reference BLEU.

Modified n-gram precision with per-n-gram clipping at the max count over the
references, brevity penalty from the per-sentence reference length closest
to the hypothesis length (ties to the shorter), geometric mean over orders
1..4.  Orders for which the whole hypothesis corpus has no n-grams at all
are skipped; an order with n-grams but zero matches yields a score of 0.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import exp, log
from typing import Sequence


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int

    @property
    def length_ratio(self) -> float:
        return self.hyp_length / self.ref_length if self.ref_length else 0.0


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(hyp_len: int, ref_lens: Sequence[int]) -> int:
    # closest reference length; ties resolved toward the shorter reference
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    reference_sets: Sequence[Sequence[Sequence[str]]],
    max_order: int = 4,
) -> BleuReport:
    if len(hypotheses) != len(reference_sets):
        raise ValueError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(reference_sets)}"
        )
    for refs in reference_sets:
        if len(refs) == 0:
            raise ValueError("every reference set must be nonempty")

    matches = [0] * max_order
    totals = [0] * max_order
    hyp_length = 0
    ref_length = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        hyp_length += len(hyp)
        ref_length += _closest_ref_length(len(hyp), [len(r) for r in refs])
        for n in range(1, max_order + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            cap: Counter = Counter()
            for ref in refs:
                ref_counts = _ngrams(ref, n)
                for gram, c in ref_counts.items():
                    if c > cap[gram]:
                        cap[gram] = c
            totals[n - 1] += sum(counts.values())
            matches[n - 1] += sum(min(c, cap[gram]) for gram, c in counts.items())

    precisions = [matches[n] / totals[n] if totals[n] else 0.0 for n in range(max_order)]
    if hyp_length == 0:
        return BleuReport(0.0, precisions, 0.0, 0, ref_length)
    brevity = 1.0 if hyp_length > ref_length else exp(1.0 - ref_length / hyp_length)

    active = [n for n in range(max_order) if totals[n] > 0]
    if not active or any(matches[n] == 0 for n in active):
        return BleuReport(0.0, precisions, brevity, hyp_length, ref_length)
    mean = exp(sum(log(precisions[n]) for n in active) / len(active))
    return BleuReport(100.0 * brevity * mean, precisions, brevity, hyp_length, ref_length)


def bleu_score(hypotheses, reference_sets, max_order: int = 4) -> float:
    """Corpus BLEU in [0, 100]."""
    return corpus_bleu(hypotheses, reference_sets, max_order).score
