"""Multi-engine hypothesis combination: alignment, language model, search."""

from .align import AlignmentGraph, Link, align_pair, build_graph, count_crossings, match_kind
from .lm import NGramLM, lm_score, train_lm
from .search import (
    CombineParams,
    CombineResult,
    HypothesisSet,
    Pick,
    check_constraints,
    combine,
    combine_corpus,
)

__all__ = [
    "AlignmentGraph",
    "CombineParams",
    "CombineResult",
    "HypothesisSet",
    "Link",
    "NGramLM",
    "Pick",
    "align_pair",
    "build_graph",
    "check_constraints",
    "combine",
    "combine_corpus",
    "count_crossings",
    "lm_score",
    "match_kind",
    "train_lm",
]
