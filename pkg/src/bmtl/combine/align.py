"""Monolingual word alignment between two hypotheses of the same sentence.

Words match exactly (ignoring case) or by a shared prefix of at least
four characters.  Among one-to-one matchings of maximum size, the aligner
returns one with the fewest crossing link pairs, preferring exact matches
next and then the first matching in left-to-right search order.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

STEM_PREFIX = 4
EXHAUSTIVE_LIMIT = 20


@dataclass(frozen=True)
class Link:
    i: int
    j: int
    kind: str  # "exact" or "stem"


def match_kind(a: str, b: str) -> Optional[str]:
    la, lb = a.lower(), b.lower()
    if la == lb:
        return "exact"
    if len(la) >= STEM_PREFIX and len(lb) >= STEM_PREFIX and la[:STEM_PREFIX] == lb[:STEM_PREFIX]:
        return "stem"
    return None


def count_crossings(links: Sequence[Link]) -> int:
    return sum(
        1
        for x in range(len(links))
        for y in range(x + 1, len(links))
        if (links[x].i - links[y].i) * (links[x].j - links[y].j) < 0
    )


def _candidates(a: Sequence[str], b: Sequence[str]) -> List[List[Tuple[int, str]]]:
    return [[(j, k) for j, wb in enumerate(b) if (k := match_kind(wa, wb))] for wa in a]


def _exhaustive(cands) -> List[Link]:
    n = len(cands)
    suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + (1 if cands[i] else 0)
    best_key = None
    best_links: List[Link] = []
    links: List[Link] = []

    def rec(i, used, card, cross, exact):
        nonlocal best_key, best_links
        if i == n:
            key = (card, -cross, exact)
            if best_key is None or key > best_key:
                best_key, best_links = key, list(links)
            return
        if best_key is not None and (card + suffix[i], -cross, exact + suffix[i]) <= best_key:
            return
        for j, kind in cands[i]:
            if used >> j & 1:
                continue
            added = sum(1 for l in links if l.j > j)
            links.append(Link(i, j, kind))
            rec(i + 1, used | (1 << j), card + 1, cross + added, exact + (kind == "exact"))
            links.pop()
        rec(i + 1, used, card, cross, exact)

    rec(0, 0, 0, 0, 0)
    return best_links


def _greedy(cands) -> List[Link]:
    links: List[Link] = []
    used = set()
    for i, options in enumerate(cands):
        free = [(sum(1 for l in links if l.j > j), kind != "exact", j, kind) for j, kind in options if j not in used]
        if free:
            _, _, j, kind = min(free)
            used.add(j)
            links.append(Link(i, j, kind))
    return links


def align_pair(hyp_a: Sequence[str], hyp_b: Sequence[str]) -> List[Link]:
    """Links ``(i, j, kind)`` from positions of ``hyp_a`` to positions of ``hyp_b``."""
    cands = _candidates(hyp_a, hyp_b)
    if max(len(hyp_a), len(hyp_b)) <= EXHAUSTIVE_LIMIT:
        return _exhaustive(cands)
    return _greedy(cands)


class AlignmentGraph:
    """Pairwise alignments among all hypotheses, queried per (system, position)."""

    def __init__(self, hyps: Sequence[Sequence[str]], pairs: Optional[Dict[Tuple[int, int], List[Link]]] = None):
        self.hyps = [list(h) for h in hyps]
        if pairs is None:
            pairs = {}
            for s in range(len(hyps)):
                for t in range(s + 1, len(hyps)):
                    pairs[(s, t)] = align_pair(hyps[s], hyps[t])
        self.pairs = pairs
        self.partners: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
        for (s, t), links in pairs.items():
            if s == t:
                raise ValueError("links must join distinct systems")
            for l in links:
                self.partners.setdefault((s, l.i), []).append((t, l.j))
                self.partners.setdefault((t, l.j), []).append((s, l.i))
        for key, lst in self.partners.items():
            lst.sort()
            systems = [t for t, _ in lst]
            if len(systems) != len(set(systems)):
                raise ValueError(f"position {key} links to more than one position of the same system")

    def linked(self, system: int, position: int) -> List[Tuple[int, int]]:
        return self.partners.get((system, position), [])


def build_graph(hyps: Sequence[Sequence[str]]) -> AlignmentGraph:
    return AlignmentGraph(hyps)
