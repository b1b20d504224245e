"""Greedy and beam-search generation from a single decoder.

Search code talks to a *stepper*: any object with ``vocab_size``,
``initial()`` returning per-sentence hidden states, and
``step(hidden, prev_tokens, rows)`` returning ``(log_probs, hidden)``.
:class:`bmtl.seq2seq.DecoderStepper` is the model-backed implementation.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch

from .seq2seq import DecoderStepper, ModelConfig
from .subword import BOS, EOS, PAD, SubwordAssets

BANNED = (PAD, BOS)


@dataclass
class Hypothesis:
    ids: List[int]
    score: float
    norm_score: float
    decoder: str = ""
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.ids) - 1

    def validate(self) -> None:
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError(f"hypothesis must be framed by BOS/EOS: {self.ids}")
        if any(t in (BOS, EOS, PAD) for t in self.ids[1:-1]):
            raise ValueError(f"hypothesis has interior BOS/EOS/PAD: {self.ids}")
        if not math.isfinite(self.score):
            raise ValueError("hypothesis score is not finite")


def normalize_score(score: float, length: int, alpha: float) -> float:
    return score / (max(length, 1) ** alpha)


def default_max_len(source_len: int) -> int:
    return 3 * source_len + 10


def _mask_banned(logprobs: torch.Tensor) -> torch.Tensor:
    logprobs = logprobs.clone()
    logprobs[:, list(BANNED)] = float("-inf")
    return logprobs


def greedy_search(stepper, max_len: Sequence[int], name: str = "", alpha: float = 1.0) -> List[Hypothesis]:
    """Batched argmax decoding; ``max_len[i]`` bounds sentence i's generated tokens."""
    h = stepper.initial()
    n = h.shape[0]
    rows = torch.arange(n)
    prev = torch.full((n,), BOS, dtype=torch.long)
    ids = [[BOS] for _ in range(n)]
    scores = [0.0] * n
    done = [False] * n
    limit = max(max_len) if n else 0
    for t in range(limit):
        active = [i for i in range(n) if not done[i] and t < max_len[i]]
        if not active:
            break
        sel = torch.tensor(active)
        logprobs, h_new = stepper.step(h.index_select(0, sel), prev.index_select(0, sel), rows.index_select(0, sel))
        logprobs = _mask_banned(logprobs)
        best = torch.argmax(logprobs, dim=-1)
        h = h.clone()
        h[sel] = h_new.to(h.dtype)
        for k, i in enumerate(active):
            tok = int(best[k])
            ids[i].append(tok)
            scores[i] += float(logprobs[k, tok])
            prev[i] = tok
            if tok == EOS:
                done[i] = True
    hyps = []
    for i in range(n):
        truncated = not done[i]
        if truncated:
            ids[i].append(EOS)
        hyps.append(Hypothesis(ids[i], scores[i], normalize_score(scores[i], len(ids[i]) - 1, alpha), name, truncated))
    return hyps


def greedy_decode(store, config: ModelConfig, name: str, source, max_len: Optional[int] = None, stepper=None) -> Hypothesis:
    if stepper is None:
        stepper = DecoderStepper.from_source(config, store, name, [list(source)])
    if max_len is None:
        max_len = default_max_len(len(source))
    return greedy_search(stepper, [max_len], name)[0]


def beam_search(stepper, beam_size: int, max_len: int, alpha: float = 1.0, name: str = "", row: int = 0) -> Hypothesis:
    """Beam search for encoder row ``row``.

    Finished hypotheses are ranked by ``score / length**alpha`` with ties
    going to the lexicographically smaller id sequence.  The greedy path is
    always among the candidates, so the result never scores below greedy.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    h0 = stepper.initial()[row : row + 1]
    alive = [(0.0, [BOS])]
    alive_h = h0
    finished = []
    for _ in range(max_len):
        n = len(alive)
        prev = torch.tensor([ids[-1] for _, ids in alive], dtype=torch.long)
        logprobs, h_new = stepper.step(alive_h, prev, torch.full((n,), row, dtype=torch.long))
        logprobs = _mask_banned(logprobs)
        total = torch.tensor([s for s, _ in alive], dtype=torch.float64).unsqueeze(1) + logprobs.double()
        flat = total.reshape(-1)
        finite = int(torch.isfinite(flat).sum())
        k = min(beam_size, finite)
        if k == 0:
            break
        threshold = torch.topk(flat, k).values[-1]
        picked = torch.nonzero(flat >= threshold).reshape(-1).tolist()
        V = logprobs.shape[1]
        cands = sorted(
            ((float(flat[j]), alive[j // V][1] + [j % V], j // V) for j in picked),
            key=lambda c: (-c[0], c[1]),
        )[:beam_size]
        next_alive, keep_rows = [], []
        for score, ids, src in cands:
            if ids[-1] == EOS:
                finished.append(Hypothesis(ids, score, normalize_score(score, len(ids) - 1, alpha), name))
            else:
                next_alive.append((score, ids))
                keep_rows.append(src)
        if not next_alive:
            alive = []
            break
        alive = next_alive
        alive_h = h_new.index_select(0, torch.tensor(keep_rows))
    for score, ids in alive:
        ids = ids + [EOS]
        finished.append(Hypothesis(ids, score, normalize_score(score, len(ids) - 1, alpha), name, truncated=True))
    if beam_size > 1:
        finished.append(greedy_search(_RowStepper(stepper, row), [max_len], name, alpha)[0])
    return min(finished, key=lambda hyp: (-hyp.norm_score, hyp.ids))


class _RowStepper:
    """View of one encoder row of a stepper as a batch of one."""

    def __init__(self, stepper, row):
        self.stepper, self.row = stepper, row
        self.vocab_size = stepper.vocab_size

    def initial(self):
        return self.stepper.initial()[self.row : self.row + 1]

    def step(self, hidden, prev, rows):
        return self.stepper.step(hidden, prev, torch.full_like(rows, self.row))


def beam_search_decode(
    store,
    config: ModelConfig,
    name: str,
    source,
    beam_size: int = 4,
    max_len: Optional[int] = None,
    length_alpha: float = 1.0,
    stepper=None,
) -> Hypothesis:
    if stepper is None:
        stepper = DecoderStepper.from_source(config, store, name, [list(source)])
    if max_len is None:
        max_len = default_max_len(len(source))
    return beam_search(stepper, beam_size, max_len, length_alpha, name)


@dataclass
class SearchParams:
    beam_size: int = 4
    length_alpha: float = 1.0
    max_len: Optional[int] = None  # default: 3 * source length + 10
    batch_size: int = 64


class AssetMismatchError(ValueError):
    pass


def _pad(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out


def decode_ids(store, config: ModelConfig, name: str, sources: Sequence[Sequence[int]], params: SearchParams) -> List[Hypothesis]:
    """Decode already-encoded source id sequences, preserving order."""
    hyps: List[Hypothesis] = []
    for start in range(0, len(sources), params.batch_size):
        chunk = list(sources[start : start + params.batch_size])
        stepper = DecoderStepper.from_source(config, store, name, _pad(chunk))
        limits = [params.max_len or default_max_len(len(s)) for s in chunk]
        if params.beam_size == 1:
            hyps.extend(greedy_search(stepper, limits, name, params.length_alpha))
        else:
            for row, limit in enumerate(limits):
                hyps.append(beam_search(stepper, params.beam_size, limit, params.length_alpha, name, row))
    return hyps


def translate_corpus(
    store,
    config: ModelConfig,
    name: str,
    sources: Sequence[Sequence[str]],
    source_assets: SubwordAssets,
    target_assets: SubwordAssets,
    params: Optional[SearchParams] = None,
    expected_source_digest: Optional[str] = None,
    expected_target_digest: Optional[str] = None,
):
    """Translate tokenized, truecased source sentences into word-level hypotheses.

    Returns ``(word_sequences, hypotheses)`` in input order.  No detruecasing
    or detokenizing happens here.
    """
    params = params or SearchParams()
    if expected_source_digest is not None and source_assets.digest != expected_source_digest:
        raise AssetMismatchError("source subword assets do not match the ones the model was trained with")
    if expected_target_digest is not None and target_assets.digest != expected_target_digest:
        raise AssetMismatchError(f"target subword assets for decoder {name!r} do not match the model")
    if not sources:
        return [], []
    ids = [source_assets.encode(words) for words in sources]
    hyps = decode_ids(store, config, name, ids, params)
    return [target_assets.decode(h.ids) for h in hyps], hyps


def write_hypotheses(path, words: Sequence[Sequence[str]], hyps: Optional[Sequence[Hypothesis]] = None, score_path=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in words:
            f.write(" ".join(line) + "\n")
    if score_path is not None and hyps is not None:
        with open(score_path, "w", encoding="utf-8", newline="\n") as f:
            for i, h in enumerate(hyps, 1):
                f.write(f"{i}\t{h.norm_score:.6f}\n")
