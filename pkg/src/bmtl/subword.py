"""Byte-pair encoding: learning merge tables and segmenting words.

Words are represented during learning as their characters followed by a
separate end-of-word symbol ``</w>``.  When a segmentation is returned,
a trailing lone ``</w>`` is fused onto the symbol before it, so every
word-final subword carries the marker as a suffix.
"""

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

EOW = "</w>"
PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
UNK_WORD = "<unk>"
MERGES_HEADER = "#bpe-merges v1"


class MergeTable:
    """Ordered BPE merges; the rank of a merge is its position."""

    def __init__(self, merges: Sequence[Tuple[str, str]] = ()):
        self.merges: Tuple[Tuple[str, str], ...] = tuple(tuple(m) for m in merges)
        self.ranks: Dict[Tuple[str, str], int] = {}
        for rank, pair in enumerate(self.merges):
            if pair in self.ranks:
                raise ValueError(f"duplicate merge {pair} at rank {rank}")
            self.ranks[pair] = rank
        self._segment = lru_cache(maxsize=65536)(self._segment_uncached)

    def __len__(self):
        return len(self.merges)

    def __eq__(self, other):
        return isinstance(other, MergeTable) and self.merges == other.merges

    def __hash__(self):
        return hash(self.merges)

    def __repr__(self):
        return f"MergeTable({len(self.merges)} merges)"

    def segment(self, word: str) -> Tuple[str, ...]:
        return self._segment(word)

    def _segment_uncached(self, word: str) -> Tuple[str, ...]:
        if not word:
            return ()
        symbols = list(word) + [EOW]
        ranks = self.ranks
        while len(symbols) > 1:
            best = None
            for pair in zip(symbols, symbols[1:]):
                r = ranks.get(pair)
                if r is not None and (best is None or r < best):
                    best = r
            if best is None:
                break
            left, right = self.merges[best]
            merged = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(_fuse_marker(symbols))

    def to_text(self) -> str:
        lines = [MERGES_HEADER]
        lines += [f"{rank}\t{left}\t{right}" for rank, (left, right) in enumerate(self.merges)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "MergeTable":
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if not lines or lines[0] != MERGES_HEADER:
            raise ValueError(f"{path}: missing header {MERGES_HEADER!r}")
        merges = []
        for lineno, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or int(parts[0]) != len(merges):
                raise ValueError(f"{path}:{lineno}: malformed merge record {line!r}")
            merges.append((parts[1], parts[2]))
        return cls(merges)


def _fuse_marker(symbols: List[str]) -> List[str]:
    if len(symbols) >= 2 and symbols[-1] == EOW:
        return symbols[:-2] + [symbols[-2] + EOW]
    return symbols


class SubwordVocabulary:
    """Bijection between subword strings and integer ids."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self.index: Dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = i

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, SubwordVocabulary) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise KeyError(f"unknown subword id {idx}")
        return self.tokens[idx]

    def to_text(self) -> str:
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SubwordVocabulary":
        tokens = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, idx = line.rpartition("\t")
                if int(idx) != len(tokens):
                    raise ValueError(f"{path}:{lineno}: ids must be ascending and contiguous")
                tokens.append(tok)
        return cls(tokens)


def word_frequencies(sentences: Iterable[Sequence[str]]) -> Counter:
    freqs = Counter()
    for tokens in sentences:
        freqs.update(tokens)
    return freqs


def learn_bpe(word_freqs: Mapping[str, int], target_vocab_size: int):
    """Greedily learn merges until the vocabulary reaches ``target_vocab_size``.

    The vocabulary holds the reserved tokens, the base symbols (each
    character, plus its word-final form ``c</w>``), every merge product,
    and the word-final form of any product that ends a word without having
    been merged with the marker yet.  The last group keeps every training
    word encodable without UNK.  Merging stops when the next merge would
    overflow the budget or when no pair occurs at least twice.

    Returns ``(MergeTable, SubwordVocabulary)``.
    """
    words = [list(w) + [EOW] for w in sorted(word_freqs) if w]
    freqs = [int(word_freqs[w]) for w in sorted(word_freqs) if w]

    base = set()
    for sym in words:
        base.update(sym[:-2])
        base.add(sym[-2] + EOW)
    if target_vocab_size < len(base) + len(RESERVED):
        raise ValueError(
            f"vocabulary budget {target_vocab_size} is below the base alphabet size "
            f"{len(base)} plus {len(RESERVED)} reserved tokens"
        )

    known = set(base)
    added: List[str] = []

    pair_counts: Dict[Tuple[str, str], int] = defaultdict(int)
    pair_words: Dict[Tuple[str, str], set] = defaultdict(set)
    for wi, sym in enumerate(words):
        for pair in zip(sym, sym[1:]):
            pair_counts[pair] += freqs[wi]
            pair_words[pair].add(wi)
    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: List[Tuple[str, str]] = []
    while heap:
        neg, pair = heap[0]
        if pair_counts.get(pair, 0) != -neg:
            heapq.heappop(heap)  # stale entry
            continue
        if -neg < 2:
            break
        left, right = pair
        product = left + right

        # Apply the merge to a scratch copy first to see how much vocabulary it costs.
        touched = sorted(pair_words[pair])
        rewritten = {}
        new_symbols = {product} - known
        for wi in touched:
            sym = words[wi]
            out = []
            i = 0
            while i < len(sym):
                if i + 1 < len(sym) and sym[i] == left and sym[i + 1] == right:
                    out.append(product)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            rewritten[wi] = out
            if len(out) >= 2 and out[-1] == EOW and out[-2] + EOW not in known:
                new_symbols.add(out[-2] + EOW)
        if len(known) + len(new_symbols) + len(RESERVED) > target_vocab_size:
            break

        heapq.heappop(heap)
        merges.append(pair)
        for tok in sorted(new_symbols):
            known.add(tok)
            added.append(tok)

        changed = set()
        for wi, out in rewritten.items():
            old = words[wi]
            f = freqs[wi]
            for p in zip(old, old[1:]):
                pair_counts[p] -= f
                changed.add(p)
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                pair_words[p].add(wi)
                changed.add(p)
            words[wi] = out
        for p in changed:
            c = pair_counts[p]
            if c <= 0:
                pair_counts.pop(p, None)
                pair_words.pop(p, None)
            else:
                heapq.heappush(heap, (-c, p))

    vocab = SubwordVocabulary(list(RESERVED) + sorted(base) + added)
    return MergeTable(merges), vocab


def segment_word(table: MergeTable, word: str) -> List[str]:
    return list(table.segment(word))


def encode_sentence(vocab: SubwordVocabulary, table: MergeTable, tokens: Sequence[str]) -> List[int]:
    ids = [BOS]
    for word in tokens:
        ids.extend(vocab.id(s) for s in table.segment(word))
    ids.append(EOS)
    return ids


def decode_to_words(vocab: SubwordVocabulary, ids: Sequence[int]) -> List[str]:
    words: List[str] = []
    buf = ""
    for idx in ids:
        tok = vocab.token(int(idx))
        if idx in (PAD, BOS, EOS):
            continue
        if idx == UNK:
            if buf:
                words.append(buf)
                buf = ""
            words.append(UNK_WORD)
        elif tok.endswith(EOW):
            words.append(buf + tok[: -len(EOW)])
            buf = ""
        else:
            buf += tok
    if buf:
        words.append(buf)
    return words


@dataclass(frozen=True)
class SubwordAssets:
    """A merge table together with the vocabulary learned alongside it."""

    table: MergeTable
    vocab: SubwordVocabulary

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.table.to_text().encode("utf-8"))
        h.update(b"\0")
        h.update(self.vocab.to_text().encode("utf-8"))
        return h.hexdigest()

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return encode_sentence(self.vocab, self.table, tokens)

    def decode(self, ids: Sequence[int]) -> List[str]:
        return decode_to_words(self.vocab, ids)

    def save(self, prefix) -> None:
        self.table.save(f"{prefix}.merges")
        self.vocab.save(f"{prefix}.vocab")

    @classmethod
    def load(cls, prefix) -> "SubwordAssets":
        return cls(MergeTable.load(f"{prefix}.merges"), SubwordVocabulary.load(f"{prefix}.vocab"))

    @classmethod
    def learn(cls, word_freqs: Mapping[str, int], budget: int) -> "SubwordAssets":
        return cls(*learn_bpe(word_freqs, budget))
