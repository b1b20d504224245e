"""Normalization, tokenization and truecasing for plain-text corpora.

A small, self-contained replacement for the usual Moses preprocessing
scripts.  The rules are fixed tables so that every stage is reproducible
and invertible on canonically punctuated text.
"""

import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

# Characters rewritten by normalize_text, applied after NFC composition.
NORMALIZATION_TABLE: Dict[str, str] = {
    "“": '"',  # left double quotation mark
    "”": '"',  # right double quotation mark
    "„": '"',  # double low-9 quotation mark
    "‟": '"',
    "«": '"',  # guillemets
    "»": '"',
    "‘": "'",
    "’": "'",
    "‚": "'",
    "‛": "'",
    "′": "'",
    "–": "-",  # en dash
    "\u2014": "-",  # em dash
    "‒": "-",
    "−": "-",  # minus sign
    "…": "...",
    " ": " ",  # no-break space
    " ": " ",
    " ": " ",
}

# Attach to the token on their left when detokenizing.
CLOSING_PUNCT = frozenset(",.!?;:%)]}")
# Attach to the token on their right when detokenizing.
OPENING_PUNCT = frozenset("([{¿¡")
# Alternate between opening and closing, starting with opening.
QUOTES = frozenset("\"'")

_TRANSLATE = str.maketrans(NORMALIZATION_TABLE)
_WS = re.compile(r"\s+")
# Numbers keep internal decimal points and separators; words keep internal
# apostrophes and hyphens; anything else is a single-character token.
_TOKEN = re.compile(r"\d+(?:[.,]\d+)+|\w+(?:['\-]\w+)*|\S")


class CorpusDecodeError(ValueError):
    """A corpus line is not valid UTF-8."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: invalid UTF-8 ({reason})")
        self.path = path
        self.lineno = lineno


def normalize_text(line) -> str:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    line = unicodedata.normalize("NFC", line).translate(_TRANSLATE)
    return _WS.sub(" ", line).strip()


def tokenize(line: str) -> List[str]:
    return _TOKEN.findall(line)


def detokenize(tokens: Sequence[str]) -> str:
    out: List[str] = []
    open_quotes = set()
    glue_next = False
    for tok in tokens:
        if tok in QUOTES:
            if tok in open_quotes:
                open_quotes.discard(tok)
                out.append(tok)
            else:
                open_quotes.add(tok)
                if out and not glue_next:
                    out.append(" ")
                out.append(tok)
                glue_next = True
                continue
        elif tok in CLOSING_PUNCT:
            out.append(tok)
        else:
            if out and not glue_next:
                out.append(" ")
            out.append(tok)
        glue_next = tok in OPENING_PUNCT
    return "".join(out)


@dataclass(frozen=True)
class SentenceRecord:
    raw: str
    tokens: Tuple[str, ...]
    normalized: bool = True
    truecased: bool = False


@dataclass(frozen=True)
class TruecaseModel:
    """Maps a lowercased token to its dominant surface form and its count."""

    casing: Dict[str, Tuple[str, int]] = field(default_factory=dict)

    def lookup(self, token: str):
        entry = self.casing.get(token.lower())
        return None if entry is None else entry[0]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for key in sorted(self.casing):
                surface, count = self.casing[key]
                f.write(f"{surface}\t{count}\n")

    @classmethod
    def load(cls, path) -> "TruecaseModel":
        casing = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    surface, count = line.split("\t")
                    casing[surface.lower()] = (surface, int(count))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed truecase record {line!r}")
        return cls(casing)


def _dominant(counts: Counter) -> Tuple[str, int]:
    # Ties go to the greatest code-point string, i.e. the least capitalized form.
    surface = max(counts, key=lambda s: (counts[s], s))
    return surface, counts[surface]


def train_truecaser(corpus: Iterable[Sequence[str]]) -> TruecaseModel:
    inner: Dict[str, Counter] = defaultdict(Counter)
    initial: Dict[str, Counter] = defaultdict(Counter)
    seen = False
    for tokens in corpus:
        seen = True
        for i, tok in enumerate(tokens):
            (initial if i == 0 else inner)[tok.lower()][tok] += 1
    if not seen:
        raise ValueError("cannot train a truecaser on an empty corpus")
    casing = {}
    for key in set(inner) | set(initial):
        # Sentence-initial casing is uninformative unless it is all we have.
        casing[key] = _dominant(inner[key] if inner[key] else initial[key])
    return TruecaseModel(casing)


def apply_truecase(model: TruecaseModel, tokens: Sequence[str]) -> List[str]:
    out = list(tokens)
    if not out:
        return out
    head = out[0]
    known = model.lookup(head)
    if known is not None:
        out[0] = known
    elif head[1:] == head[1:].lower():
        out[0] = head[:1].lower() + head[1:]
    return out


def detruecase(tokens: Sequence[str]) -> List[str]:
    out = list(tokens)
    if out:
        head = out[0]
        for i, ch in enumerate(head):
            if ch.isalpha():
                out[0] = head[:i] + ch.upper() + head[i + 1 :]
                break
    return out


def read_lines(path) -> Iterator[str]:
    """Yield decoded lines of a UTF-8 corpus, without trailing newlines."""
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, 1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusDecodeError(path, lineno, exc.reason) from None
            yield text.rstrip("\r\n")


def write_lines(path, lines: Iterable[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def preprocess_line(line: str, model: TruecaseModel = None) -> List[str]:
    tokens = tokenize(normalize_text(line))
    return apply_truecase(model, tokens) if model is not None else tokens


def postprocess_tokens(tokens: Sequence[str]) -> str:
    """Inverse chain used before scoring: detruecase then detokenize."""
    return detokenize(detruecase(tokens))
