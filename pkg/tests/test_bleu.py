import math

import pytest
from hypothesis import given, settings, strategies as st

from bmtl.bleu import corpus_bleu, corpus_stats

from bleu_oracle import MINI_CORPUS, MINI_CORPUS_BLEU, SINGLE_CASES


def test_worked_example():
    report = corpus_bleu(["the cat sat on the mat"], ["the cat sat on a mat"])
    assert report.precisions == pytest.approx((5 / 6, 3 / 5, 2 / 4, 1 / 3))
    assert report.brevity_penalty == 1.0
    assert report.score == pytest.approx(53.73, abs=0.01)


def test_short_hypothesis_drops_orders():
    report = corpus_bleu(["the cat"], ["the cat on the mat"])
    assert report.brevity_penalty == pytest.approx(math.exp(-1.5))
    assert report.totals == (2, 1, 0, 0)
    assert report.score == pytest.approx(100 * math.exp(-1.5), abs=0.01)


@pytest.mark.parametrize("row,expected", SINGLE_CASES)
def test_single_sentence_cases(row, expected):
    hyp, ref, _, _ = MINI_CORPUS[row]
    assert corpus_bleu([hyp], [ref]).score == pytest.approx(expected, abs=0.01)


def test_mini_corpus_counts_and_score():
    hyps = [h for h, _, _, _ in MINI_CORPUS]
    refs = [r for _, r, _, _ in MINI_CORPUS]
    for hyp, ref, m, t in MINI_CORPUS:
        matches, totals, _, _ = corpus_stats([hyp], [ref])
        assert (tuple(matches), tuple(totals)) == (m, t), hyp
    report = corpus_bleu(hyps, refs)
    assert report.matches == (30, 12, 6, 2) and report.totals == (34, 24, 15, 8)
    assert (report.hyp_len, report.ref_len) == (34, 38)
    assert report.score == pytest.approx(MINI_CORPUS_BLEU, abs=0.01)


def test_format():
    text = corpus_bleu(["a b c d"], ["a b c d"]).format()
    assert text == "BLEU = 100.00 100.0/100.0/100.0/100.0 (BP=1.000, hyp_len=4, ref_len=4)"


def test_errors():
    with pytest.raises(ValueError):
        corpus_bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        corpus_bleu([], [])


def test_retokenizes_punctuation():
    assert corpus_bleu(["Hello, world."], ["Hello , world ."]).score == 100.0


WORD = st.sampled_from("a b c d e".split())
SENT = st.lists(WORD, min_size=1, max_size=8).map(" ".join)
PAIRS = st.lists(st.tuples(SENT, SENT), min_size=1, max_size=6)


@settings(max_examples=80, deadline=None)
@given(PAIRS, st.randoms(use_true_random=False))
def test_permutation_invariance(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = corpus_bleu([h for h, _ in pairs], [r for _, r in pairs])
    b = corpus_bleu([h for h, _ in shuffled], [r for _, r in shuffled])
    assert a.score == pytest.approx(b.score, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(PAIRS)
def test_hundred_iff_identical(pairs):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    assert corpus_bleu(refs, refs).score == pytest.approx(100.0)
    score = corpus_bleu(hyps, refs).score
    assert (score >= 100.0 - 1e-9) == (hyps == refs)
    assert 0.0 <= score <= 100.0 + 1e-9


@settings(max_examples=80, deadline=None)
@given(PAIRS, SENT)
def test_adding_exact_pair_grows_counts(pairs, extra):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    before = corpus_bleu(hyps, refs)
    after = corpus_bleu(hyps + [extra], refs + [extra])
    assert after.brevity_penalty >= before.brevity_penalty - 1e-12
    assert all(a >= b for a, b in zip(after.matches, before.matches))
    assert all(a - b == ta - tb for a, b, ta, tb in zip(after.matches, before.matches, after.totals, before.totals))
