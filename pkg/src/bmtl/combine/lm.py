"""Linearly interpolated n-gram language model over words.

``P(w | h) = sum_n lambda_n * P_n^MLE(w | h) + lambda_0 / |V|``.  When an
order's context was never observed its MLE term is undefined; that
order's weight is passed down to the next lower order so every
conditional distribution still sums to one over the vocabulary.
The unigram term covers words only; the end-of-sentence symbol is
reachable through the higher orders and the uniform floor.
"""

import math
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

BOS_WORD = "<s>"
EOS_WORD = "</s>"
DEFAULT_LAMBDAS = (0.5, 0.3, 0.15, 0.05)


class NGramLM:
    def __init__(self, order: int, counts: Dict[int, Counter], lambdas: Sequence[float]):
        if order < 1:
            raise ValueError("order must be at least 1")
        lambdas = tuple(float(x) for x in lambdas)
        if len(lambdas) != order + 1:
            raise ValueError(f"an order-{order} model needs {order + 1} interpolation weights, got {len(lambdas)}")
        if any(x < 0 for x in lambdas) or abs(sum(lambdas) - 1.0) > 1e-9:
            raise ValueError(f"interpolation weights must be non-negative and sum to 1, got {lambdas}")
        self.order = order
        self.lambdas = lambdas  # highest order first, uniform floor last
        self.counts = {n: Counter(counts.get(n, {})) for n in range(1, order + 1)}
        self.context_counts: Dict[int, Counter] = {}
        for n in range(2, order + 1):
            ctx = Counter()
            for gram, c in self.counts[n].items():
                ctx[gram[:-1]] += c
            self.context_counts[n] = ctx
        self.unigram_total = sum(self.counts[1].values())
        self.vocab = {g[0] for g in self.counts[1]} | {EOS_WORD}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def weight(self, n: int) -> float:
        """Interpolation weight of order ``n`` (0 is the uniform floor)."""
        return self.lambdas[self.order - n]

    def prob(self, word: str, context: Sequence[str]) -> float:
        context = tuple(context)
        if len(context) < self.order - 1:
            context = (BOS_WORD,) * (self.order - 1 - len(context)) + context
        carry = 0.0
        p = 0.0
        for n in range(self.order, 1, -1):
            lam = self.weight(n) + carry
            ctx = context[len(context) - (n - 1) :]
            total = self.context_counts[n].get(ctx, 0)
            if total == 0:
                carry = lam
                continue
            p += lam * self.counts[n].get(ctx + (word,), 0) / total
            carry = 0.0
        lam = self.weight(1) + carry
        if self.unigram_total:
            p += lam * self.counts[1].get((word,), 0) / self.unigram_total
            lam = 0.0
        return p + (self.weight(0) + lam) / self.vocab_size

    def logprob(self, word: str, context: Sequence[str]) -> float:
        return math.log(self.prob(word, context))

    def initial_context(self) -> Tuple[str, ...]:
        return (BOS_WORD,) * (self.order - 1)

    def advance(self, context: Tuple[str, ...], word: str) -> Tuple[str, ...]:
        return (context + (word,))[1:] if self.order > 1 else ()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("#lambdas " + " ".join(repr(x) for x in self.lambdas) + "\n")
            for n in range(1, self.order + 1):
                f.write(f"#order {n}\n")
                for gram in sorted(self.counts[n]):
                    f.write(f"{self.counts[n][gram]}\t{' '.join(gram)}\n")

    @classmethod
    def load(cls, path, lambdas: Optional[Sequence[float]] = None) -> "NGramLM":
        counts: Dict[int, Counter] = {}
        current = None
        stored = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if line.startswith("#lambdas"):
                    stored = [float(x) for x in line.split()[1:]]
                elif line.startswith("#order"):
                    current = int(line.split()[1])
                    counts[current] = Counter()
                elif line:
                    if current is None:
                        raise ValueError(f"{path}:{lineno}: n-gram before any '#order' header")
                    c, gram = line.split("\t")
                    counts[current][tuple(gram.split(" "))] = int(c)
        order = max(counts) if counts else 1
        return cls(order, counts, lambdas or stored or DEFAULT_LAMBDAS)


def train_lm(corpus: Sequence[Sequence[str]], order: int = 3, lambdas: Optional[Sequence[float]] = None) -> NGramLM:
    if not corpus:
        raise ValueError("cannot train a language model on an empty corpus")
    lambdas = DEFAULT_LAMBDAS if lambdas is None and order == 3 else lambdas
    if lambdas is None:
        raise ValueError(f"interpolation weights are required for order {order}")
    counts = {n: Counter() for n in range(1, order + 1)}
    for words in corpus:
        for w in words:
            counts[1][(w,)] += 1
        padded = [BOS_WORD] * (order - 1) + list(words) + [EOS_WORD]
        for k in range(order - 1, len(padded)):
            for n in range(2, order + 1):
                counts[n][tuple(padded[k - n + 1 : k + 1])] += 1
    return NGramLM(order, counts, lambdas)


def lm_score(lm: NGramLM, words: Sequence[str]) -> float:
    """Total log probability of ``words`` followed by end-of-sentence."""
    ctx = lm.initial_context()
    total = 0.0
    for w in list(words) + [EOS_WORD]:
        total += lm.logprob(w, ctx)
        ctx = lm.advance(ctx, w)
    return total
