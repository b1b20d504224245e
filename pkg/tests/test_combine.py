import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from bmtl.combine import (
    AlignmentGraph,
    CombineParams,
    HypothesisSet,
    NGramLM,
    align_pair,
    check_constraints,
    combine,
    combine_corpus,
    count_crossings,
    lm_score,
    match_kind,
    train_lm,
)
from bmtl.combine.lm import EOS_WORD

from combine_oracle import lm_corpus, oracle_combine, random_set

EXHAUSTIVE = CombineParams(beam_size=None)


def _pairs(links):
    return [(l.i, l.j) for l in links]


def test_align_identity():
    links = align_pair("the cat sat".split(), "the cat sat".split())
    assert _pairs(links) == [(0, 0), (1, 1), (2, 2)]
    assert count_crossings(links) == 0


def test_align_deletion():
    assert _pairs(align_pair("the black cat".split(), "the cat".split())) == [(0, 0), (2, 1)]


def test_align_swap_has_one_crossing():
    links = align_pair(["a", "b"], ["b", "a"])
    assert sorted(_pairs(links)) == [(0, 1), (1, 0)]
    assert count_crossings(links) == 1


def test_match_kinds():
    assert match_kind("The", "the") == "exact"
    assert match_kind("blacks", "blackest") == "stem"
    assert match_kind("cat", "cats") is None  # prefix shorter than four


def test_align_prefers_fewer_crossings():
    # "x" in b can pair with either "x" in a; the non-crossing choice wins.
    links = align_pair(["x", "y", "x"], ["y", "x"])
    assert sorted(_pairs(links)) == [(1, 0), (2, 1)]


def _brute_alignment(a, b):
    """(cardinality, crossings) of the best one-to-one matching by enumeration."""
    cands = [(i, j) for i in range(len(a)) for j in range(len(b)) if match_kind(a[i], b[j])]
    best = (0, 0)
    for mask in range(1 << len(cands)):
        chosen = [cands[k] for k in range(len(cands)) if mask >> k & 1]
        if len({i for i, _ in chosen}) < len(chosen) or len({j for _, j in chosen}) < len(chosen):
            continue
        cross = sum(1 for x in chosen for y in chosen if x < y and (x[0] - y[0]) * (x[1] - y[1]) < 0)
        best = max(best, (len(chosen), -cross))
    return best[0], -best[1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from("a b c blac black".split()), max_size=5), st.lists(st.sampled_from("a b c blac black".split()), max_size=5))
def test_alignment_is_max_matching_with_min_crossings(a, b):
    links = align_pair(a, b)
    assert (len(links), count_crossings(links)) == _brute_alignment(a, b)
    assert len({l.i for l in links}) == len(links) == len({l.j for l in links})
    assert align_pair(a, b) == links


def test_graph_rejects_double_links():
    from bmtl.combine import Link

    with pytest.raises(ValueError):
        AlignmentGraph([["a"], ["a", "a"]], {(0, 1): [Link(0, 0, "exact"), Link(0, 1, "exact")]})


def test_lm_unigram_mle():
    lm = train_lm([["a", "a", "b"]], order=1, lambdas=(1.0, 0.0))
    assert lm.prob("a", ()) == pytest.approx(2 / 3)
    assert lm.prob("b", ()) == pytest.approx(1 / 3)


def test_lm_uniform_floor():
    lm = train_lm([["a", "a", "b"]], order=3, lambdas=(0.0, 0.0, 0.0, 1.0))
    for w in ("a", "b", EOS_WORD, "zzz"):
        assert lm.prob(w, ("a",)) == pytest.approx(1 / 3)


def test_lm_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        train_lm([["a"]], order=3, lambdas=(0.5, 0.3, 0.15, 0.1))


@pytest.mark.parametrize("seed", range(5))
def test_lm_normalizes(seed):
    rng = random.Random(seed)
    corpus = lm_corpus(rng)
    lm = train_lm(corpus)
    vocab = sorted(lm.vocab)
    contexts = [(), ("a",), ("a", "b"), ("zz", "a"), ("q", "r")] + [tuple(rng.sample(vocab, 2)) for _ in range(10)]
    for ctx in contexts:
        assert sum(lm.prob(w, ctx) for w in vocab) == pytest.approx(1.0, abs=1e-6)


def test_lm_trigram_by_hand():
    lm = train_lm([["a", "b"], ["a", "c"]])
    # P3(b | <s> a) = 1/2, P2(b | a) = 1/2, P1(b) = 1/4, |V| = 4
    assert lm.prob("b", ("a",)) == pytest.approx(0.5 * 0.5 + 0.3 * 0.5 + 0.15 * 0.25 + 0.05 / 4)


def test_lm_score_examples():
    lm = train_lm([["a", "b"]], order=3, lambdas=(0.0, 0.0, 0.0, 1.0))
    assert lm_score(lm, []) == pytest.approx(math.log(1 / 3))
    assert lm_score(lm, ["unk"]) == pytest.approx(2 * math.log(1 / 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.lists(st.sampled_from("a b c d zz".split()), max_size=6), st.sampled_from("a b c d zz".split()))
def test_appending_lowers_prefix_probability(seed, words, extra):
    lm = train_lm(lm_corpus(random.Random(seed)))
    def prefix(ws):
        ctx, total = lm.initial_context(), 0.0
        for w in ws:
            total += lm.logprob(w, ctx)
            ctx = lm.advance(ctx, w)
        return total
    assert prefix(words + [extra]) < prefix(words)


def test_lm_file_roundtrip(tmp_path):
    lm = train_lm(lm_corpus(random.Random(0)))
    path = tmp_path / "m.lm"
    lm.save(path)
    back = NGramLM.load(path)
    assert back.counts == lm.counts and back.lambdas == lm.lambdas
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[1] == "#order 1"
    assert all("\t" in ln for ln in text.splitlines() if not ln.startswith("#"))


@pytest.fixture(scope="module")
def lm():
    return train_lm(lm_corpus(random.Random(7)))


def test_identical_and_single_pass_through(lm):
    h = ["b", "a", "black", "b"]
    assert combine(HypothesisSet([h, h, h]), None, lm).words == h
    assert combine(HypothesisSet([h]), None, lm).words == h


def test_empty_set_errors():
    with pytest.raises(ValueError):
        HypothesisSet([])
    with pytest.raises(ValueError):
        HypothesisSet([["a"]], [0.0])


def test_small_example_matches_enumeration():
    lm = train_lm([["a", "b"]], order=3, lambdas=(0.0, 0.0, 0.0, 1.0))
    hyps = [["a", "b", "c"], ["a", "c"]]
    graph = AlignmentGraph(hyps)
    assert graph.linked(0, 0) == [(1, 0)] and graph.linked(0, 2) == [(1, 1)]
    result = combine(HypothesisSet(hyps), graph, lm, EXHAUSTIVE)
    words, score = oracle_combine(hyps, [1, 1], graph, lm, 3)
    assert result.words == words and result.score == pytest.approx(score)
    # |V| = 3, so "b" costs log 3 > 1 credit and the shorter path wins.
    assert words == ["a", "c"]
    assert score == pytest.approx(3 * math.log(1 / 3) + 4)


@pytest.mark.parametrize("seed", range(60))
def test_exhaustive_matches_oracle(seed, lm):
    rng = random.Random(seed)
    hyps, weights = random_set(rng, max_tokens=5)
    radius = rng.choice([0, 1, 2, 3])
    params = CombineParams(beam_size=None, radius=radius, w_lm=rng.choice([0.5, 1.0]), w_len=rng.choice([0.0, 0.5]))
    graph = AlignmentGraph(hyps)
    result = combine(HypothesisSet(hyps, weights), graph, lm, params)
    words, score = oracle_combine(hyps, weights, graph, lm, radius, params.w_lm, params.w_sys, params.w_len)
    assert result.score == pytest.approx(score, abs=1e-9)
    assert result.words == words


@pytest.mark.parametrize("seed", range(40))
def test_beam_output_satisfies_constraints(seed, lm):
    rng = random.Random(1000 + seed)
    hyps, weights = random_set(rng)
    hset = HypothesisSet(hyps, weights)
    graph = AlignmentGraph(hyps)
    params = CombineParams(beam_size=rng.choice([1, 4, 32]), radius=rng.choice([0, 1, 3]))
    result = combine(hset, graph, lm, params)
    assert check_constraints(hset, graph, result, params.radius) == []
    assert set(result.words) <= {w for h in hyps for w in h}


def test_check_constraints_flags_violations(lm):
    hyps = [["a", "b", "c", "d"], ["a", "c"]]
    hset, graph = HypothesisSet(hyps), AlignmentGraph(hyps)
    result = combine(hset, graph, lm, EXHAUSTIVE)
    broken = type(result)(result.words[:1], result.score, result.picks[:1])
    assert any("ended before" in p for p in check_constraints(hset, graph, broken, 3))
    twice = type(result)(result.words + result.words[:1], result.score, result.picks + result.picks[:1])
    assert check_constraints(hset, graph, twice, 3)


def test_combine_corpus_line_alignment(lm, tmp_path):
    a = [["a", "b"], ["c"]]
    b = [["a", "b"], ["c", "d"]]
    out = combine_corpus([a, b], lm)
    assert len(out) == 2 and out[0] == ["a", "b"]
    with pytest.raises(ValueError, match="system 1"):
        combine_corpus([a, b[:1]], lm)


def test_crossing_alignment_falls_back_to_best_system():
    lm = train_lm([["b", "a"]])
    hyps = [["a", "b"], ["b", "a"]]
    hset, graph = HypothesisSet(hyps), AlignmentGraph(hyps)
    result = combine(hset, graph, lm, CombineParams(beam_size=None, radius=0))
    assert result.fallback == 1 and result.words == ["b", "a"]
    assert check_constraints(hset, graph, result, 0) == []
    # With one step of slack the crossing is legal and no fallback is needed.
    assert combine(hset, graph, lm, CombineParams(beam_size=None, radius=1)).fallback is None
