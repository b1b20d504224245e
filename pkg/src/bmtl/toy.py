"""Synthetic reversal corpus bundled for desk-scale experiments.

Source sentences are walks of a first-order Markov chain over a small
lexicon of CV-syllable words (each word has a few allowed successors), so
word order carries information a language model can pick up.  The target
reverses the word order and enciphers every word with a fixed letter
permutation, so source and target vocabularies differ while the mapping
stays deterministic.  Run ``python -m bmtl.toy OUTDIR`` to
regenerate the files shipped under ``bmtl/data/toy``.
"""

import random
import sys
from pathlib import Path
from typing import List, Tuple

CONSONANTS = "bdgklmnprst"
VOWELS = "aeiou"


def _cipher(rng: random.Random) -> dict:
    cons, vows = list(CONSONANTS), list(VOWELS)
    rng.shuffle(cons)
    rng.shuffle(vows)
    table = dict(zip(CONSONANTS, cons))
    table.update(zip(VOWELS, vows))
    return table


def make_lexicon(rng: random.Random, size: int = 30) -> List[str]:
    words = set()
    while len(words) < size:
        n = rng.choice((2, 2, 3))
        words.add("".join(rng.choice(CONSONANTS) + rng.choice(VOWELS) for _ in range(n)))
    return sorted(words)


def _render(words: List[str]) -> str:
    return words[0][:1].upper() + words[0][1:] + "".join(" " + w for w in words[1:]) + "."


def make_pairs(
    n: int, seed: int = 0, lexicon_size: int = 30, min_words: int = 3, max_words: int = 6, successors: int = 4
) -> List[Tuple[str, str]]:
    rng = random.Random(seed)
    lexicon = make_lexicon(rng, lexicon_size)
    table = _cipher(rng)
    follow = {w: rng.sample(lexicon, successors) for w in lexicon}
    pairs = []
    for _ in range(n):
        words = [rng.choice(lexicon)]
        for _ in range(rng.randint(min_words, max_words) - 1):
            words.append(rng.choice(follow[words[-1]]))
        target = ["".join(table[c] for c in w) for w in reversed(words)]
        pairs.append((_render(words), _render(target)))
    return pairs


SPLITS = (("train", 300), ("dev", 50), ("test", 50))


def write_corpus(outdir, seed: int = 0) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = make_pairs(sum(n for _, n in SPLITS), seed)
    start = 0
    for split, n in SPLITS:
        chunk = pairs[start : start + n]
        start += n
        (out / f"{split}.src").write_text("".join(s + "\n" for s, _ in chunk), encoding="utf-8")
        (out / f"{split}.tgt").write_text("".join(t + "\n" for _, t in chunk), encoding="utf-8")


def data_dir() -> Path:
    return Path(__file__).parent / "data" / "toy"


if __name__ == "__main__":
    write_corpus(sys.argv[1] if len(sys.argv) > 1 else data_dir())
