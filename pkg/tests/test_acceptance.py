"""Acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line.  The toy
pipeline runs (three seeds plus a same-seed rerun) take roughly forty
minutes on one core; set ``BMTL_ACCEPTANCE_DIR`` to keep and reuse them.
"""

import json
import os
import random
import statistics
import time
from pathlib import Path

import pytest
import torch
from hypothesis import given, settings, strategies as st

from bmtl.bleu import corpus_bleu
from bmtl.combine import AlignmentGraph, CombineParams, HypothesisSet, check_constraints, combine, train_lm
from bmtl.config import load_config
from bmtl.neuralcore import check_gradients
from bmtl.pipeline import Experiment, full_model_config, parameter_report
from bmtl.subword import EOW, decode_to_words, encode_sentence, learn_bpe, segment_word
from bmtl.toy import data_dir

from bleu_oracle import MINI_CORPUS, MINI_CORPUS_BLEU, SINGLE_CASES
from combine_oracle import lm_corpus, oracle_combine, random_set
from corpora import corpora
from helpers import combined_loss_fn, model, randomize, tiny_batch, tiny_config

SEEDS = (2, 3, 4)
TOY_CFG = data_dir() / "toy.cfg"


@pytest.fixture
def verdict(capsys):
    def say(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return say


# ------------------------------------------------------------ toy pipeline


def _run_pipeline(root: Path, seed: int) -> dict:
    out = root / f"seed{seed}"
    report = out / "report.json"
    if not report.is_file():
        cfg = load_config(TOY_CFG, [f"output_dir={out}", f"seed={seed}"]).validate()
        start = time.time()
        Experiment(cfg).run()
        (out / "wall_seconds.txt").write_text(f"{time.time() - start:.1f}\n", encoding="utf-8")
    return json.loads(report.read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def runs_root(tmp_path_factory):
    env = os.environ.get("BMTL_ACCEPTANCE_DIR")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def toy_runs(runs_root):
    return {seed: _run_pipeline(runs_root, seed) for seed in SEEDS}


# --------------------------------------------------------------- criteria


def test_criterion_1_gradient_check(verdict):
    cfg = tiny_config()  # K = 2, every dimension at most 8
    store = randomize(model(cfg, dtype=torch.float64), 0)
    source, targets = tiny_batch()
    start = time.time()
    report = check_gradients(combined_loss_fn(cfg, source, targets), store)
    elapsed = time.time() - start
    ok = report.max_rel_error < 1e-4 and elapsed < 60
    verdict(1, ok, f"max rel error {report.max_rel_error:.2e} at {report.worst}, {store.numel()} params, {elapsed:.1f}s")
    assert ok


def test_criterion_2_parameter_identity(verdict):
    cfg = load_config(data_dir().parent / "full.cfg")
    report = parameter_report(full_model_config(cfg))
    bmtl = report["bmtl"]
    shared = bmtl["encoder"] + bmtl["source_embedding"]
    gap = report["baselines_total"] - bmtl["total"]
    k = len(cfg.tgt_bpe)
    ok = gap == (k - 1) * shared and report["reduction"] >= 0.15
    verdict(
        2,
        ok,
        f"BMTL {bmtl['total']:,} vs baselines {report['baselines_total']:,}; "
        f"gap {gap:,} = {k - 1} x {shared:,}; reduction {100 * report['reduction']:.2f}%",
    )
    assert ok


def test_criterion_3_toy_convergence(toy_runs, runs_root, verdict):
    rows, ok = [], True
    for seed, rep in toy_runs.items():
        bmtl = rep["systems"]["bmtl"]
        worst = min(bmtl["train_bleu"].values())
        seconds = bmtl.get("train_seconds", float("nan"))
        ok &= worst >= 95.0 and bmtl["updates"] <= 3000 and seconds < 900
        rows.append(f"seed {seed}: min train BLEU {worst:.2f} after {bmtl['updates']} updates in {seconds:.0f}s")
    verdict(3, ok, "; ".join(rows))
    assert ok


def test_criterion_4_multitask_non_degradation(toy_runs, verdict):
    rows, ok = [], True
    for name in toy_runs[SEEDS[0]]["decoders"]:
        ours = statistics.median(r["systems"]["bmtl"]["best_dev_bleu"][name] for r in toy_runs.values())
        base = statistics.median(r["systems"][f"baseline.{name}"]["best_dev_bleu"][name] for r in toy_runs.values())
        ok &= ours >= base - 2.0
        rows.append(f"{name} {ours:.2f} vs {base:.2f}")
    verdict(4, ok, "median dev BLEU BMTL vs baseline: " + ", ".join(rows))
    assert ok


def test_criterion_5_combination_constraints(verdict):
    lm = train_lm(lm_corpus(random.Random(11)))
    counts = dict(sets=0, violations=0, oracle=0, mismatches=0, identity=0, passthrough=0)
    for seed in range(1200):
        rng = random.Random(seed)
        hyps, weights = random_set(rng, max_tokens=5 if seed % 2 else 8)
        radius = rng.choice([0, 1, 2, 3])
        params = CombineParams(beam_size=32, radius=radius)
        hset, graph = HypothesisSet(hyps, weights), AlignmentGraph(hyps)
        result = combine(hset, graph, lm, params)
        counts["sets"] += 1
        vocab = {w for h in hyps for w in h}
        if check_constraints(hset, graph, result, radius) or not set(result.words) <= vocab:
            counts["violations"] += 1
        if max(len(h) for h in hyps) <= 5:
            exact = combine(hset, graph, lm, CombineParams(beam_size=None, radius=radius))
            words, score = oracle_combine(hyps, weights, graph, lm, radius)
            counts["oracle"] += 1
            if exact.words != words or abs(exact.score - score) > 1e-9:
                counts["mismatches"] += 1
        h = hyps[0]
        counts["identity"] += combine(HypothesisSet([h] * 3), None, lm, params).words != h
        counts["passthrough"] += combine(HypothesisSet([h]), None, lm, params).words != h
    ok = counts["sets"] >= 1000 and not (
        counts["violations"] or counts["mismatches"] or counts["identity"] or counts["passthrough"]
    )
    verdict(
        5,
        ok,
        f"{counts['sets']} sets, {counts['violations']} constraint violations, "
        f"{counts['mismatches']}/{counts['oracle']} oracle mismatches, "
        f"{counts['identity']} identity and {counts['passthrough']} pass-through failures",
    )
    assert ok


def test_criterion_6_combination_direction(toy_runs, verdict):
    gaps, rows = [], []
    for seed, rep in toy_runs.items():
        best = max(rep["systems"]["bmtl"]["test_bleu"].values())
        combined = rep["combined_test_bleu"]["bmtl"]
        gaps.append(combined - best)
        rows.append(f"seed {seed}: {combined:.2f} vs {best:.2f}")
    median = statistics.median(gaps)
    ok = median >= -1.0
    verdict(6, ok, f"combined minus best decoder, median {median:+.2f} ({'; '.join(rows)})")
    assert ok


def test_criterion_7_bleu_oracle(verdict):
    errors = []
    for row, expected in SINGLE_CASES:
        hyp, ref, _, _ = MINI_CORPUS[row]
        errors.append(abs(corpus_bleu([hyp], [ref]).score - expected))
    score = corpus_bleu([h for h, *_ in MINI_CORPUS], [r for _, r, *_ in MINI_CORPUS]).score
    errors.append(abs(score - MINI_CORPUS_BLEU))
    ok = max(errors) <= 0.01
    verdict(7, ok, f"mini-corpus BLEU {score:.2f} (hand {MINI_CORPUS_BLEU:.2f}), max deviation {max(errors):.1e}")
    assert ok


CORPORA = corpora()


def _base_size(freqs):
    return len({c for w in freqs for c in w[:-1]} | {w[-1] + EOW for w in freqs}) + 4


@settings(max_examples=60, deadline=None, derandomize=True)
@given(
    name=st.sampled_from(sorted(CORPORA)),
    keep=st.floats(0.3, 1.0),
    sub_seed=st.integers(0, 10**6),
    extras=st.tuples(st.integers(0, 120), st.integers(0, 120)),
)
def test_criterion_8_bpe_properties(name, keep, sub_seed, extras):
    rng = random.Random(sub_seed)
    freqs = {w: c for w, c in CORPORA[name].items() if rng.random() < keep} or dict(CORPORA[name])
    small, large = sorted(_base_size(freqs) + e for e in extras)
    table, vocab = learn_bpe(freqs, large)
    shuffled = list(freqs.items())
    rng.shuffle(shuffled)
    assert learn_bpe(dict(shuffled), large)[0] == table
    assert len(vocab) <= large
    for w in freqs:
        assert decode_to_words(vocab, encode_sentence(vocab, table, [w])) == [w]
        assert "".join(segment_word(table, w)).replace(EOW, "") == w
    prefix, prefix_vocab = learn_bpe(freqs, small)
    assert len(prefix_vocab) <= small
    assert table.merges[: len(prefix)] == prefix.merges


def test_criterion_8_summary(verdict):
    # Reaching this line means the property test above passed for all three corpora.
    sizes = {n: len(f) for n, f in CORPORA.items()}
    verdict(8, True, f"determinism, roundtrip, prefix-monotone merges and budget bound over corpora {sizes}")


def _log_rows(path):
    steps, evals = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        parts = line.split("\t")
        if parts[0] == "eval":
            evals.append(parts)
        else:
            steps.append((int(parts[0]), float(parts[1])))
    return steps, evals


def test_criterion_9_reproducibility(toy_runs, runs_root, verdict):
    seed = SEEDS[0]
    first = runs_root / f"seed{seed}"
    second = runs_root / f"rerun{seed}"
    if not (second / "report.json").is_file():
        cfg = load_config(TOY_CFG, [f"output_dir={second}", f"seed={seed}"]).validate()
        Experiment(cfg).run()
    worst, logs, same_evals = 0.0, 0, True
    for log in sorted((first / "models").glob("*.log")):
        a_steps, a_evals = _log_rows(log)
        b_steps, b_evals = _log_rows(second / "models" / log.name)
        same_evals &= a_evals == b_evals and [u for u, _ in a_steps] == [u for u, _ in b_steps]
        worst = max([worst] + [abs(x - y) for (_, x), (_, y) in zip(a_steps, b_steps)])
        logs += 1
    hyp_files = sorted(p.name for p in (first / "hyps").glob("*.txt"))
    identical = hyp_files == sorted(p.name for p in (second / "hyps").glob("*.txt")) and all(
        (first / "hyps" / n).read_bytes() == (second / "hyps" / n).read_bytes() for n in hyp_files
    )
    ok = logs > 0 and same_evals and worst <= 1e-5 and identical
    verdict(
        9,
        ok,
        f"{logs} loss logs, max per-step divergence {worst:.1e}, "
        f"{len(hyp_files)} hypothesis files {'byte-identical' if identical else 'DIFFER'}",
    )
    assert ok


def test_criterion_10_iterations_report(toy_runs, verdict):
    rep = toy_runs[SEEDS[0]]
    rows, ok = [], True
    for tag, entry in rep["systems"].items():
        its = entry["iterations_to_95pct_dev"]
        ok &= set(its) == set(entry["best_dev_bleu"]) and all(v is not None for v in its.values())
        rows.append(f"{tag} " + "/".join(f"{n}:{v}" for n, v in its.items()))
    verdict(10, ok, f"updates to 95% of best dev BLEU (seed {SEEDS[0]}): " + ", ".join(rows))
    assert ok
