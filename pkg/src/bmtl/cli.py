"""Command-line front end.

Exit status: 0 success, 1 usage error, 2 validation error, 3 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch

from . import __version__
from .bleu import corpus_bleu
from .combine import CombineParams, NGramLM, combine_corpus, train_lm
from .config import ConfigError, ExperimentConfig, load_config
from .decoding import AssetMismatchError, SearchParams, translate_corpus, write_hypotheses
from .neuralcore import ArchiveError, NonFiniteError
from .pipeline import Experiment, file_sha256, full_model_config, parameter_report, read_tokenized, write_manifest
from .subword import SubwordAssets, word_frequencies
from .textpipe import CorpusDecodeError, postprocess_tokens, read_lines, write_lines
from .training import AssetHashError, load_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _manifest(path, command: str, inputs: Dict[str, object], outputs: Dict[str, object], seed=None, extra=None):
    entries = {"command": command, "version": __version__, "torch": torch.__version__}
    if seed is not None:
        entries["seed"] = seed
    for key, p in inputs.items():
        entries[f"input.{key}"] = p
        entries[f"input.{key}.sha256"] = file_sha256(p)
    for key, p in outputs.items():
        entries[f"output.{key}"] = p
        if Path(p).is_file():
            entries[f"output.{key}.sha256"] = file_sha256(p)
    entries.update(extra or {})
    write_manifest(path, entries)


def _require_file(field: str, path) -> str:
    if not Path(path).is_file():
        raise ConfigError(field, f"file not found: {path}")
    return str(path)


def _config(args, require_files: bool = True) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "output_dir", None):
        overrides.append(f"output_dir={args.output_dir}")
    return load_config(args.config, overrides).validate(require_files)


def _cfg_inputs(cfg: ExperimentConfig) -> Dict[str, str]:
    return {k: getattr(cfg, k) for k in ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt")}


# ------------------------------------------------------------------ commands


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    exp = Experiment(cfg)
    exp.preprocess()
    outputs = {p.name: str(p) for p in sorted(exp.ws.root.joinpath("data").iterdir())}
    _manifest(exp.ws.path("manifest.preprocess.txt"), "preprocess", _cfg_inputs(cfg), outputs, cfg.seed)
    return EXIT_OK


def cmd_subword_train(args) -> int:
    if args.budget <= 0:
        raise ConfigError("budget", "must be positive")
    corpus = read_tokenized(_require_file("input", args.input))
    assets = SubwordAssets.learn(word_frequencies(corpus), args.budget)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    assets.save(args.output)
    _manifest(
        args.manifest or f"{args.output}.manifest",
        "subword-train",
        {"corpus": args.input},
        {"merges": f"{args.output}.merges", "vocab": f"{args.output}.vocab"},
        extra={"budget": args.budget, "vocab_size": len(assets.vocab), "digest": assets.digest},
    )
    return EXIT_OK


def cmd_subword_apply(args) -> int:
    for suffix in (".merges", ".vocab"):
        _require_file("assets", args.assets + suffix)
    assets = SubwordAssets.load(args.assets)
    corpus = read_tokenized(_require_file("input", args.input))
    write_lines(args.output, (" ".join(s for w in words for s in assets.table.segment(w)) for words in corpus))
    _manifest(
        args.manifest or f"{args.output}.manifest",
        "subword-apply",
        {"corpus": args.input, "merges": args.assets + ".merges", "vocab": args.assets + ".vocab"},
        {"segmented": args.output},
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    exp = Experiment(cfg)
    for prefix in [exp.src_prefix()] + [exp.tgt_prefix(b) for b in cfg.tgt_bpe]:
        _require_file("subword assets (run subword-train or pipeline first)", f"{prefix}.vocab")
    decoders = args.decoders.split(",") if args.decoders else cfg.decoder_names
    unknown = [d for d in decoders if d not in cfg.decoder_names]
    if unknown:
        raise ConfigError("decoders", f"unknown decoder(s) {unknown}; configured: {cfg.decoder_names}")
    tag = args.tag or ("bmtl" if len(decoders) > 1 else f"baseline.{decoders[0]}")
    path, result = exp.train(tag, decoders)
    _manifest(
        exp.ws.path("models", f"{tag}.manifest"),
        "train",
        _cfg_inputs(cfg),
        {"checkpoint": str(path), "log": str(exp.ws.path("models", f"{tag}.log"))},
        cfg.seed,
        {"updates": result.updates, "best_dev_bleu": json.dumps(result.best, sort_keys=True)},
    )
    return EXIT_OK


def cmd_translate(args) -> int:
    ckpt = load_checkpoint(_require_file("checkpoint", args.checkpoint))
    if args.decoder not in ckpt.model_config.decoder_names:
        raise ConfigError("decoder", f"{args.decoder!r} not in checkpoint decoders {ckpt.model_config.decoder_names}")
    src_prefix = args.source_assets or ckpt.assets["source"]["path"]
    tgt_prefix = args.target_assets or ckpt.assets[f"target:{args.decoder}"]["path"]
    for field, prefix in (("source_assets", src_prefix), ("target_assets", tgt_prefix)):
        _require_file(field, f"{prefix}.vocab")
    if args.beam <= 0:
        raise ConfigError("beam", "must be positive")
    sources = read_tokenized(_require_file("input", args.input))
    words, hyps = translate_corpus(
        ckpt.store,
        ckpt.model_config,
        args.decoder,
        sources,
        SubwordAssets.load(src_prefix),
        SubwordAssets.load(tgt_prefix),
        SearchParams(beam_size=args.beam, length_alpha=args.alpha),
        expected_source_digest=ckpt.assets["source"]["sha256"],
        expected_target_digest=ckpt.assets[f"target:{args.decoder}"]["sha256"],
    )
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_hypotheses(args.output, words, hyps, f"{args.output}.scores")
    _manifest(
        args.manifest or f"{args.output}.manifest",
        "translate",
        {"checkpoint": args.checkpoint, "source": args.input},
        {"hypotheses": args.output, "scores": f"{args.output}.scores"},
        extra={"decoder": args.decoder, "beam": args.beam, "alpha": args.alpha},
    )
    return EXIT_OK


def cmd_combine(args) -> int:
    systems = [read_tokenized(_require_file("hyps", p)) for p in args.hyps]
    if args.lm:
        lm = NGramLM.load(_require_file("lm", args.lm))
    elif args.lm_train:
        lm = train_lm(read_tokenized(_require_file("lm_train", args.lm_train)), args.lm_order)
    else:
        raise UsageError("one of --lm or --lm-train is required")
    if args.weights and len(args.weights) != len(systems):
        raise ConfigError("weights", f"need {len(systems)} weights, got {len(args.weights)}")
    if args.radius < 0:
        raise ConfigError("radius", "must be non-negative")
    lines = [len(s) for s in systems]
    if len(set(lines)) != 1:
        raise ConfigError("hyps", f"hypothesis files have different line counts {lines}")
    params = CombineParams(args.beam or None, args.radius, args.w_lm, args.w_sys, args.w_len)
    combined = combine_corpus(systems, lm, params, args.weights)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_lines(args.output, (" ".join(w) for w in combined))
    inputs = {f"hyps{k}": p for k, p in enumerate(args.hyps)}
    inputs.update({"lm": args.lm} if args.lm else {"lm_train": args.lm_train})
    _manifest(args.manifest or f"{args.output}.manifest", "combine", inputs, {"combined": args.output})
    return EXIT_OK


def cmd_score(args) -> int:
    hyps = list(read_lines(_require_file("hyp", args.hyp)))
    refs = list(read_lines(_require_file("ref", args.ref)))
    if len(hyps) != len(refs):
        raise ConfigError("hyp", f"{len(hyps)} hypothesis lines but {len(refs)} reference lines")
    if args.postprocess:
        hyps = [postprocess_tokens(h.split()) for h in hyps]
    report = corpus_bleu(hyps, refs)
    print(report.format())
    if args.manifest:
        _manifest(args.manifest, "score", {"hyp": args.hyp, "ref": args.ref}, {}, extra={"bleu": f"{report.score:.2f}"})
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _config(args, require_files=False)
    report = parameter_report(full_model_config(cfg))
    bmtl = report["bmtl"]
    print(f"source_embedding\t{bmtl['source_embedding']}")
    print(f"encoder\t{bmtl['encoder']}")
    for name in cfg.decoder_names:
        print(f"decoder:{name}\t{bmtl['decoder:' + name]}")
    print(f"bmtl_total\t{bmtl['total']}")
    for name, total in report["baselines"].items():
        print(f"baseline:{name}\t{total}")
    print(f"baselines_total\t{report['baselines_total']}")
    print(f"reduction\t{100 * report['reduction']:.2f}%")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    report = Experiment(cfg).run()
    sys.stdout.write(Path(cfg.output_dir, "report.txt").read_text(encoding="utf-8"))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _add_config(p):
    p.add_argument("--config", required=True, help="key=value experiment config")
    p.add_argument("--output-dir", help="overrides output_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmtl", description="Block multitask NMT with multi-granularity decoders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("preprocess", help="normalize, tokenize and truecase the corpus")
    _add_config(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("subword-train", help="learn BPE merges from a tokenized corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--budget", type=int, required=True, help="vocabulary size including reserved tokens")
    p.add_argument("--output", required=True, help="asset prefix; writes PREFIX.merges and PREFIX.vocab")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_subword_train)

    p = sub.add_parser("subword-apply", help="segment a tokenized corpus into subwords")
    p.add_argument("--assets", required=True, help="asset prefix")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_subword_apply)

    p = sub.add_parser("train", help="train a model on preprocessed, segmented data")
    _add_config(p)
    p.add_argument("--decoders", help="comma-separated decoder names (default: all)")
    p.add_argument("--tag", help="model name under OUTPUT/models")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a tokenized source file with one decoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--source-assets")
    p.add_argument("--target-assets")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("combine", help="combine aligned hypothesis files")
    p.add_argument("--hyps", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lm", help="saved n-gram model")
    p.add_argument("--lm-train", help="tokenized text to train an n-gram model on")
    p.add_argument("--lm-order", type=int, default=3)
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--beam", type=int, default=32, help="0 searches exhaustively")
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--w-lm", type=float, default=1.0)
    p.add_argument("--w-sys", type=float, default=1.0)
    p.add_argument("--w-len", type=float, default=0.0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("score", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--postprocess", action="store_true", help="detruecase and detokenize hypotheses first")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("params", help="print the parameter-count breakdown of a config")
    _add_config(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("pipeline", help="run every stage and write report.json")
    _add_config(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"bmtl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("bmtl: usage error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bmtl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bmtl: invalid {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AssetHashError, AssetMismatchError, CorpusDecodeError, ArchiveError, ValueError, KeyError) as exc:
        print(f"bmtl: invalid input: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteError, RuntimeError, OSError) as exc:
        print(f"bmtl: runtime failure: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
