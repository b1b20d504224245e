"""Constrained beam search over aligned hypotheses.

A search state records, for every system, which token positions have been
used.  Each step emits one unused token that lies within ``radius`` of its
system's frontier (first unused position) and also uses every position
aligned to it.  Mid-search, no system may have more than ``radius``
unused positions behind its furthest used one.  A state may end the
sentence once at least one system has been used completely; the
remaining unused tokens of the other systems are then dropped.

Crossing alignments can leave no legal terminating path (always possible
with radius 0).  The search then falls back to emitting one system's
hypothesis verbatim, choosing the best-scoring system.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .align import AlignmentGraph
from .lm import NGramLM, lm_score


@dataclass
class HypothesisSet:
    hyps: List[List[str]]
    weights: Optional[List[float]] = None

    def __post_init__(self):
        self.hyps = [list(h) for h in self.hyps]
        if not self.hyps:
            raise ValueError("cannot combine an empty hypothesis set")
        if self.weights is None:
            self.weights = [1.0] * len(self.hyps)
        if len(self.weights) != len(self.hyps) or any(w <= 0 for w in self.weights):
            raise ValueError("need one positive confidence weight per system")


@dataclass(frozen=True)
class CombineParams:
    beam_size: Optional[int] = 32  # None searches exhaustively
    radius: int = 3
    w_lm: float = 1.0
    w_sys: float = 1.0
    w_len: float = 0.0


@dataclass(frozen=True)
class Pick:
    system: int
    position: int
    consumed: Tuple[Tuple[int, int], ...]


@dataclass
class CombineResult:
    words: List[str]
    score: float
    picks: List[Pick] = field(default_factory=list)
    fallback: Optional[int] = None  # system copied verbatim when no legal path exists


def _frontier(mask: int) -> int:
    # number of trailing one bits
    return ((mask ^ (mask + 1)) >> 1).bit_length()


def _holes(mask: int) -> int:
    return mask.bit_length() - bin(mask).count("1")


@dataclass(frozen=True)
class _State:
    words: Tuple[str, ...]
    used: Tuple[int, ...]
    credit: float
    lm_logp: float
    context: Tuple[str, ...]
    picks: Tuple[Pick, ...]


def final_score(lm: NGramLM, params: CombineParams, words: Sequence[str], credit: float) -> float:
    return params.w_lm * lm_score(lm, words) + params.w_sys * credit + params.w_len * len(words)


def _consume(hset, graph, used, s, p):
    consumed = [(s, p)] + [(t, q) for t, q in graph.linked(s, p) if not used[t] >> q & 1]
    new = list(used)
    for t, q in consumed:
        new[t] |= 1 << q
    return tuple(consumed), tuple(new)


def expansions(hset: HypothesisSet, graph: AlignmentGraph, used: Tuple[int, ...], radius: int):
    """Yield ``(system, position, consumed, new_used)`` for every legal next token."""
    for s, hyp in enumerate(hset.hyps):
        f = _frontier(used[s])
        for p in range(f, min(f + radius, len(hyp) - 1) + 1):
            if used[s] >> p & 1:
                continue
            consumed, new = _consume(hset, graph, used, s, p)
            if any(_holes(new[t]) > radius for t, _ in consumed):
                continue
            yield s, p, consumed, new


def can_terminate(hset: HypothesisSet, used: Tuple[int, ...]) -> bool:
    return any(used[s] == (1 << len(h)) - 1 for s, h in enumerate(hset.hyps))


def _viable(hset: HypothesisSet, graph: AlignmentGraph, used: Tuple[int, ...], radius: int) -> bool:
    return can_terminate(hset, used) or next(expansions(hset, graph, used, radius), None) is not None


def verbatim(hset: HypothesisSet, lm: NGramLM, params: CombineParams) -> CombineResult:
    """Best single hypothesis, each token credited with its own system weight."""
    best = None
    for s, hyp in enumerate(hset.hyps):
        score = final_score(lm, params, hyp, hset.weights[s] * len(hyp))
        if best is None or score > best.score:
            best = CombineResult(list(hyp), score, [], fallback=s)
    return best


def _in_order(
    hset: HypothesisSet, graph: AlignmentGraph, lm: NGramLM, params: CombineParams, system: int = 0
) -> Optional[CombineResult]:
    """Follow one system left to right, if that path is legal."""
    used = tuple(0 for _ in hset.hyps)
    picks, credit = [], 0.0
    for p in range(len(hset.hyps[system])):
        legal = {(s, q): new for s, q, _, new in expansions(hset, graph, used, params.radius)}
        if (system, p) not in legal:
            return None
        consumed, used = _consume(hset, graph, used, system, p)
        credit += sum(hset.weights[t] for t, _ in consumed)
        picks.append(Pick(system, p, consumed))
    words = list(hset.hyps[system])
    return CombineResult(words, final_score(lm, params, words, credit), picks)


def combine(
    hset: HypothesisSet,
    graph: Optional[AlignmentGraph],
    lm: NGramLM,
    params: CombineParams = CombineParams(),
) -> CombineResult:
    """Return the best-scoring terminated path.

    Score = w_lm * LM log probability (with end-of-sentence)
          + w_sys * sum of confidence weights of all consumed tokens
          + w_len * output length.
    Ties go to the lexicographically smaller word sequence.  A single
    system, or unanimous systems, pass through unchanged.
    """
    if not isinstance(hset, HypothesisSet):
        hset = HypothesisSet(hset)
    if graph is None:
        graph = AlignmentGraph(hset.hyps)
    if len(hset.hyps) == 1 or all(h == hset.hyps[0] for h in hset.hyps):
        result = _in_order(hset, graph, lm, params)
        if result is not None:
            return result

    start = _State((), tuple(0 for _ in hset.hyps), 0.0, 0.0, lm.initial_context(), ())
    best: Optional[CombineResult] = None
    best_key = None

    def consider(state: _State):
        nonlocal best, best_key
        if not can_terminate(hset, state.used):
            return
        score = final_score(lm, params, state.words, state.credit)
        key = (-score, state.words)
        if best_key is None or key < best_key:
            best_key = key
            best = CombineResult(list(state.words), score, list(state.picks))

    beam = [start]
    while beam:
        for state in beam:
            consider(state)
        children: Dict[Tuple, _State] = {}
        for state in beam:
            for s, p, consumed, new in expansions(hset, graph, state.used, params.radius):
                word = hset.hyps[s][p]
                words = state.words + (word,)
                key = (words, new)
                if key in children or not _viable(hset, graph, new, params.radius):
                    continue
                children[key] = _State(
                    words,
                    new,
                    state.credit + sum(hset.weights[t] for t, _ in consumed),
                    state.lm_logp + lm.logprob(word, state.context),
                    lm.advance(state.context, word),
                    state.picks + (Pick(s, p, consumed),),
                )
        ranked = sorted(
            children.values(),
            key=lambda st: (
                -(params.w_lm * st.lm_logp + params.w_sys * st.credit + params.w_len * len(st.words)),
                st.words,
                st.used,
            ),
        )
        beam = ranked if params.beam_size is None else ranked[: params.beam_size]
    if best is None:
        return verbatim(hset, lm, params)
    return best


def check_constraints(hset: HypothesisSet, graph: AlignmentGraph, result: CombineResult, radius: int) -> List[str]:
    """Replay a result's picks and list every violated search constraint."""
    if result.fallback is not None:
        if result.words != hset.hyps[result.fallback] or result.picks:
            return [f"fallback output is not system {result.fallback} verbatim"]
        return []
    problems = []
    used = [0] * len(hset.hyps)
    if len(result.picks) != len(result.words):
        problems.append("number of picks differs from number of output words")
    for k, pick in enumerate(result.picks):
        s, p = pick.system, pick.position
        if not 0 <= p < len(hset.hyps[s]):
            problems.append(f"step {k}: position {p} outside system {s}")
            continue
        if k < len(result.words) and hset.hyps[s][p] != result.words[k]:
            problems.append(f"step {k}: word {result.words[k]!r} is not token {p} of system {s}")
        f = _frontier(used[s])
        if not f <= p <= f + radius:
            problems.append(f"step {k}: position {p} outside window [{f}, {f + radius}] of system {s}")
        expected = {(s, p)} | {(t, q) for t, q in graph.linked(s, p) if not used[t] >> q & 1}
        if set(pick.consumed) != expected:
            problems.append(f"step {k}: consumed {sorted(pick.consumed)} but expected {sorted(expected)}")
        for t, q in pick.consumed:
            if used[t] >> q & 1:
                problems.append(f"step {k}: token ({t}, {q}) used twice")
            used[t] |= 1 << q
        for t in range(len(used)):
            if _holes(used[t]) > radius:
                problems.append(f"step {k}: system {t} has {_holes(used[t])} holes mid-search")
    if not any(used[s] == (1 << len(h)) - 1 for s, h in enumerate(hset.hyps)):
        problems.append("sentence ended before any system was fully used")
    return problems


def combine_corpus(
    systems: Sequence[Sequence[Sequence[str]]],
    lm: NGramLM,
    params: CombineParams = CombineParams(),
    weights: Optional[Sequence[float]] = None,
) -> List[List[str]]:
    """Combine N aligned hypothesis corpora line by line."""
    if not systems:
        raise ValueError("no systems to combine")
    n_lines = len(systems[0])
    for k, sys_lines in enumerate(systems):
        if len(sys_lines) != n_lines:
            raise ValueError(f"system {k} has {len(sys_lines)} lines, expected {n_lines}")
    out = []
    for i in range(n_lines):
        hset = HypothesisSet([sys_lines[i] for sys_lines in systems], list(weights) if weights else None)
        out.append(combine(hset, None, lm, params).words)
    return out
