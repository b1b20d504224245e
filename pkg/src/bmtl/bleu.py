"""Corpus-level BLEU-4 with a total, deterministic smoothing rule.

Both sides are re-tokenized with :func:`bmtl.textpipe.tokenize`.  Orders
with no n-grams in the hypotheses are dropped from the geometric mean;
orders with zero matches use a floored match count of 0.1.
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .textpipe import tokenize

MAX_ORDER = 4
ZERO_MATCH_FLOOR = 0.1


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: Tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: Tuple[int, ...] = ()
    totals: Tuple[int, ...] = ()

    def format(self) -> str:
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        return f"BLEU = {self.score:.2f} {p} (BP={self.brevity_penalty:.3f}, hyp_len={self.hyp_len}, ref_len={self.ref_len})"

    def __str__(self):
        return self.format()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp: Sequence[str], ref: Sequence[str]) -> Tuple[List[int], List[int]]:
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return matches, totals


def corpus_stats(hypotheses: Sequence[str], references: Sequence[str]):
    if len(hypotheses) != len(references):
        raise ValueError(f"hypothesis/reference line counts differ: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = tokenize(hyp), tokenize(ref)
        m, t = sentence_stats(h, r)
        for n in range(MAX_ORDER):
            matches[n] += m[n]
            totals[n] += t[n]
        hyp_len += len(h)
        ref_len += len(r)
    return matches, totals, hyp_len, ref_len


def bleu_from_stats(matches, totals, hyp_len: int, ref_len: int) -> BleuReport:
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    orders = [n for n in range(MAX_ORDER) if totals[n] > 0]
    if hyp_len == 0:
        bp = 1.0 if ref_len == 0 else 0.0
    else:
        bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    if not orders:
        score = 100.0 if hyp_len == ref_len == 0 else 0.0
    else:
        log_mean = sum(math.log(max(matches[n], ZERO_MATCH_FLOOR) / totals[n]) for n in orders) / len(orders)
        score = 100.0 * bp * math.exp(log_mean)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, tuple(matches), tuple(totals))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str]) -> BleuReport:
    return bleu_from_stats(*corpus_stats(hypotheses, references))
