"""End-to-end experiment: preprocess, segment, train, translate, combine, score."""

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from . import __version__
from .bleu import corpus_bleu
from .combine import CombineParams, combine_corpus, train_lm
from .config import ExperimentConfig, dump_config
from .decoding import SearchParams, translate_corpus, write_hypotheses
from .neuralcore import substream_seed
from .seq2seq import ModelConfig, count_parameters, init_parameters
from .subword import SubwordAssets, word_frequencies
from .textpipe import (
    TruecaseModel,
    apply_truecase,
    normalize_text,
    postprocess_tokens,
    read_lines,
    tokenize,
    train_truecaser,
    write_lines,
)
from .training import (
    Checkpoint,
    DevSet,
    TrainConfig,
    Trainer,
    asset_record,
    load_checkpoint,
    make_examples,
    save_checkpoint,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
SIDES = ("src", "tgt")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, entries: Dict[str, object]) -> None:
    """Run manifest as sorted ``key=value`` lines (no timestamps, so reruns match)."""
    lines = [f"{k}={entries[k]}" for k in sorted(entries)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tokenize_lines(lines: Sequence[str]) -> List[List[str]]:
    return [tokenize(normalize_text(line)) for line in lines]


def read_tokenized(path) -> List[List[str]]:
    return [line.split() for line in read_lines(path)]


def write_tokenized(path, corpus: Sequence[Sequence[str]]) -> None:
    write_lines(path, (" ".join(toks) for toks in corpus))


def training_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        decay_reading=cfg.decay_reading,
        lr_decay=cfg.lr_decay,
        batch_size=cfg.batch_size,
        clip=cfg.clip,
        loss_mode=cfg.loss_mode,
        max_updates=cfg.max_updates,
        eval_every=cfg.eval_every,
        patience=cfg.patience,
        max_len=cfg.max_len,
        seed=seed,
        target_bleu=cfg.target_bleu or None,
    )


def model_config(cfg: ExperimentConfig, src_size: int, decoders: Sequence[Tuple[str, int]]) -> ModelConfig:
    return ModelConfig(
        src_vocab_size=src_size,
        decoders=tuple(decoders),
        emb_dim=cfg.emb_dim,
        enc_hidden=cfg.enc_hidden,
        enc_layers=cfg.enc_layers,
        dec_hidden=cfg.dec_hidden,
        dropout=cfg.dropout,
        attention_dim=cfg.attention_dim or None,
    )


def full_model_config(cfg: ExperimentConfig) -> ModelConfig:
    """Model config with vocabulary sizes equal to the configured budgets."""
    return model_config(cfg, cfg.src_bpe, [(f"bpe{b}", b) for b in cfg.tgt_bpe])


def parameter_report(mc: ModelConfig) -> Dict[str, object]:
    bmtl = count_parameters(mc)
    baselines = {name: count_parameters(mc.single(name))["total"] for name in mc.decoder_names}
    shared = bmtl["encoder"] + bmtl["source_embedding"]
    total_baselines = sum(baselines.values())
    return {
        "bmtl": bmtl,
        "baselines": baselines,
        "baselines_total": total_baselines,
        "shared": shared,
        "reduction": 1.0 - bmtl["total"] / total_baselines,
    }


def iterations_to_fraction(history, name: str, fraction: float = 0.95) -> Optional[int]:
    """First evaluated update whose dev BLEU reaches ``fraction`` of the best."""
    scores = [(u, s[name]) for u, s in history if name in s]
    if not scores:
        return None
    final = max(v for _, v in scores)
    for u, v in scores:
        if v >= fraction * final:
            return u
    return None


@dataclass
class Workspace:
    root: Path

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


class Experiment:
    """Stages of one experiment; every stage reads and writes files under ``output_dir``."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.ws = Workspace(Path(cfg.output_dir))
        torch.set_num_threads(cfg.threads)

    # --------------------------------------------------------- preprocessing

    def preprocess(self) -> None:
        cfg = self.cfg
        raw = {(split, side): list(read_lines(getattr(cfg, f"{split}_{side}"))) for split in SPLITS for side in SIDES}
        for side in SIDES:
            tokens = {split: tokenize_lines(raw[split, side]) for split in SPLITS}
            model = train_truecaser(tokens["train"])
            model.save(self.ws.path("data", f"truecase.{side}"))
            for split in SPLITS:
                write_tokenized(
                    self.ws.path("data", f"{split}.{side}.tok"), [apply_truecase(model, t) for t in tokens[split]]
                )

    def subword(self) -> None:
        cfg = self.cfg
        src_train = read_tokenized(self.ws.path("data", "train.src.tok"))
        tgt_train = read_tokenized(self.ws.path("data", "train.tgt.tok"))
        SubwordAssets.learn(word_frequencies(src_train), cfg.src_bpe).save(self.ws.path("subword", f"src.bpe{cfg.src_bpe}"))
        tgt_freqs = word_frequencies(tgt_train)
        for b in cfg.tgt_bpe:
            SubwordAssets.learn(tgt_freqs, b).save(self.ws.path("subword", f"tgt.bpe{b}"))

    def src_prefix(self) -> Path:
        return self.ws.path("subword", f"src.bpe{self.cfg.src_bpe}")

    def tgt_prefix(self, budget: int) -> Path:
        return self.ws.path("subword", f"tgt.bpe{budget}")

    def assets(self):
        src = SubwordAssets.load(self.src_prefix())
        tgt = {f"bpe{b}": SubwordAssets.load(self.tgt_prefix(b)) for b in self.cfg.tgt_bpe}
        return src, tgt

    # -------------------------------------------------------------- training

    def train(self, tag: str, decoders: Sequence[str], seed: Optional[int] = None, init_seed: Optional[int] = None):
        """Train a model with the given decoders; returns (best checkpoint path, TrainResult)."""
        cfg = self.cfg
        seed = cfg.seed if seed is None else seed
        src, tgt = self.assets()
        tgt = {n: tgt[n] for n in decoders}
        mc = model_config(cfg, len(src.vocab), [(n, len(tgt[n].vocab)) for n in decoders])
        tc = training_config(cfg, substream_seed(seed, "train"))
        examples, dropped = make_examples(
            read_tokenized(self.ws.path("data", "train.src.tok")),
            read_tokenized(self.ws.path("data", "train.tgt.tok")),
            src,
            tgt,
            cfg.max_len,
        )
        dev_sources = [src.encode(w) for w in read_tokenized(self.ws.path("data", "dev.src.tok"))]
        dev = DevSet(dev_sources, list(read_lines(cfg.dev_tgt)))
        store = init_parameters(mc, substream_seed(seed, "init") if init_seed is None else init_seed)
        refs = {"source": asset_record(self.src_prefix())}
        for n in decoders:
            refs[f"target:{n}"] = asset_record(self.tgt_prefix(int(n[3:])))
        with open(self.ws.path("models", f"{tag}.log"), "w", encoding="utf-8") as logf:
            trainer = Trainer(mc, tc, store, examples, dev, tgt, log_file=logf, asset_refs=refs)
            start = time.time()
            result = trainer.run()
            elapsed = time.time() - start
        result.seconds = elapsed
        save_checkpoint(self.ws.path("models", f"{tag}.last.ckpt"), trainer.checkpoint())
        if result.best_snapshot is not None:
            store.load_snapshot(result.best_snapshot)
        best_path = self.ws.path("models", f"{tag}.ckpt")
        save_checkpoint(best_path, trainer.checkpoint())
        log.info("%s: %d updates in %.1fs, dropped %d pairs", tag, result.updates, elapsed, dropped)
        return best_path, result

    # ------------------------------------------------------------ translation

    def translate(self, ckpt_path, decoder: str, split: str, out_path) -> List[List[str]]:
        ckpt = load_checkpoint(ckpt_path)
        src, tgt = self.assets()
        sources = read_tokenized(self.ws.path("data", f"{split}.src.tok"))
        params = SearchParams(beam_size=self.cfg.beam_size, length_alpha=self.cfg.length_alpha)
        words, hyps = translate_corpus(
            ckpt.store,
            ckpt.model_config,
            decoder,
            sources,
            src,
            tgt[decoder],
            params,
            expected_source_digest=ckpt.assets["source"]["sha256"],
            expected_target_digest=ckpt.assets[f"target:{decoder}"]["sha256"],
        )
        write_hypotheses(out_path, words)
        return words

    def language_model(self):
        cfg = self.cfg
        lm = train_lm(read_tokenized(self.ws.path("data", "train.tgt.tok")), cfg.lm_order, cfg.lm_lambdas)
        lm.save(self.ws.path("lm", "target.lm"))
        return lm

    def combine_params(self) -> CombineParams:
        cfg = self.cfg
        return CombineParams(cfg.combine_beam or None, cfg.combine_radius, cfg.w_lm, cfg.w_sys, cfg.w_len)

    def score(self, hyp_words: Sequence[Sequence[str]], split: str = "test"):
        refs = list(read_lines(getattr(self.cfg, f"{split}_tgt")))
        return corpus_bleu([postprocess_tokens(w) for w in hyp_words], refs)

    # ---------------------------------------------------------------- driver

    def run(self) -> dict:
        cfg = self.cfg
        self.ws.path("config.txt").write_text(dump_config(cfg), encoding="utf-8")
        self.preprocess()
        self.subword()
        src, tgt = self.assets()
        names = cfg.decoder_names
        lm = self.language_model()

        systems = {"bmtl": names}
        if cfg.train_baselines:
            systems.update({f"baseline.{n}": [n] for n in names})

        report = {"decoders": names, "systems": {}}
        hyps_by_group: Dict[str, List] = {"bmtl": [], "baseline": []}
        for tag, decs in systems.items():
            ckpt_path, result = self.train(tag, decs)
            entry = {
                "updates": result.updates,
                "train_seconds": round(result.seconds, 1),
                "best_dev_bleu": result.best,
                "best_dev_update": result.best_update,
                "iterations_to_95pct_dev": {n: iterations_to_fraction(result.history, n) for n in decs},
                "dev_history": [[u, s] for u, s in result.history],
                "test_bleu": {},
                "train_bleu": {},
            }
            for n in decs:
                hyp_path = self.ws.path("hyps", f"{tag}.{n}.test.txt")
                words = self.translate(ckpt_path, n, "test", hyp_path)
                entry["test_bleu"][n] = self.score(words).score
                hyps_by_group["bmtl" if tag == "bmtl" else "baseline"].append(words)
                train_words = self.translate(ckpt_path, n, "train", self.ws.path("hyps", f"{tag}.{n}.train.txt"))
                entry["train_bleu"][n] = self.score(train_words, "train").score
            report["systems"][tag] = entry

        params = self.combine_params()
        report["combined_test_bleu"] = {}
        for group, systems_words in hyps_by_group.items():
            if len(systems_words) < 1:
                continue
            combined = combine_corpus(systems_words, lm, params)
            out = self.ws.path("hyps", f"{group}.combined.test.txt")
            write_tokenized(out, combined)
            report["combined_test_bleu"][group] = self.score(combined).score

        mc = model_config(cfg, len(src.vocab), [(n, len(tgt[n].vocab)) for n in names])
        report["parameters"] = parameter_report(mc)
        report["full_scale_parameters"] = parameter_report(full_model_config(cfg))

        self.ws.path("report.json").write_text(json.dumps(report, indent=1, sort_keys=True), encoding="utf-8")
        self.ws.path("report.txt").write_text(format_report(report), encoding="utf-8")
        manifest = {
            "command": "pipeline",
            "version": __version__,
            "seed": cfg.seed,
            "torch": torch.__version__,
        }
        for split in SPLITS:
            for side in SIDES:
                manifest[f"input.{split}_{side}.sha256"] = file_sha256(getattr(cfg, f"{split}_{side}"))
        for p in sorted(self.ws.root.joinpath("hyps").glob("*.txt")):
            manifest[f"output.{p.name}.sha256"] = file_sha256(p)
        write_manifest(self.ws.path("run_manifest.txt"), manifest)
        return report


def format_report(report: dict) -> str:
    lines = []
    bmtl = report["systems"]["bmtl"]
    lines.append("system\tdecoder\ttest_bleu\ttrain_bleu\tbest_dev_bleu\tupdates_to_best_dev\tupdates_to_95pct_dev")
    for tag, entry in report["systems"].items():
        for n in entry["test_bleu"]:
            lines.append(
                f"{tag}\t{n}\t{entry['test_bleu'][n]:.2f}\t{entry['train_bleu'][n]:.2f}\t"
                f"{entry['best_dev_bleu'].get(n, float('nan')):.2f}\t{entry['best_dev_update'].get(n)}\t"
                f"{entry['iterations_to_95pct_dev'].get(n)}"
            )
    for group, value in report["combined_test_bleu"].items():
        lines.append(f"{group}\tcombined\t{value:.2f}")
    p = report["parameters"]
    lines.append(f"params\tbmtl\t{p['bmtl']['total']}")
    lines.append(f"params\tbaselines_total\t{p['baselines_total']}")
    lines.append(f"params\treduction\t{100 * p['reduction']:.1f}%")
    return "\n".join(lines) + "\n"
