"""Multitask batching, the combined loss, the update loop and checkpoints."""

import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from . import bleu as bleu_mod
from .decoding import SearchParams, decode_ids
from .neuralcore import (
    AdamState,
    NonFiniteError,
    ParameterStore,
    adam_step,
    clip_store_gradients,
    read_archive,
    substream_seed,
    write_archive,
    DTYPES,
    dtype_name,
)
from .seq2seq import ModelConfig, bmtl_forward
from .subword import PAD, SubwordAssets
from .textpipe import postprocess_tokens

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "bmtl-checkpoint"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # "beta1": the 0.9 decay is Adam's first-moment decay.
    # "lr": additionally multiply the learning rate by lr_decay after each
    # evaluation that improves no decoder.
    decay_reading: str = "beta1"
    lr_decay: float = 0.9
    batch_size: int = 32
    clip: float = 1.0
    loss_mode: str = "mean"  # or "sum"
    max_updates: int = 100000
    eval_every: int = 1000
    patience: int = 5
    max_len: int = 100
    seed: int = 0
    target_bleu: Optional[float] = None  # stop early once every decoder reaches this dev BLEU

    def __post_init__(self):
        if self.loss_mode not in ("mean", "sum"):
            raise ValueError(f"loss_mode must be 'mean' or 'sum', got {self.loss_mode!r}")
        if self.decay_reading not in ("beta1", "lr"):
            raise ValueError(f"decay_reading must be 'beta1' or 'lr', got {self.decay_reading!r}")
        if self.batch_size < 1 or self.clip <= 0 or self.lr < 0:
            raise ValueError("batch_size must be >= 1, clip > 0 and lr >= 0")


@dataclass
class Example:
    index: int
    source: List[int]
    targets: Dict[str, List[int]]


@dataclass
class Batch:
    source: torch.Tensor  # (B, S)
    source_lengths: torch.Tensor
    targets: Dict[str, torch.Tensor]  # name -> (B, L)
    target_lengths: Dict[str, torch.Tensor]
    indices: List[int]

    def __len__(self):
        return self.source.shape[0]


def segment_targets_multi(words: Sequence[str], assets: Mapping[str, SubwordAssets]) -> Dict[str, List[int]]:
    return {name: a.encode(words) for name, a in assets.items()}


def make_examples(
    sources: Sequence[Sequence[str]],
    targets: Sequence[Sequence[str]],
    source_assets: SubwordAssets,
    target_assets: Mapping[str, SubwordAssets],
    max_len: int = 100,
) -> Tuple[List[Example], int]:
    """Encode a parallel corpus; pairs longer than ``max_len`` subwords are dropped.

    The length limit applies to the source and to the longest (finest) target.
    Returns ``(examples, dropped_count)``.
    """
    if len(sources) != len(targets):
        raise ValueError(f"parallel corpus sides differ in length: {len(sources)} vs {len(targets)}")
    examples, dropped = [], 0
    for i, (src, tgt) in enumerate(zip(sources, targets)):
        src_ids = source_assets.encode(src)
        tgt_ids = segment_targets_multi(tgt, target_assets)
        # BOS/EOS are framing, not subwords.
        if len(src_ids) - 2 > max_len or max(len(t) - 2 for t in tgt_ids.values()) > max_len:
            dropped += 1
            continue
        examples.append(Example(i, src_ids, tgt_ids))
    if dropped:
        log.info("dropped %d of %d sentence pairs longer than %d subwords", dropped, len(sources), max_len)
    return examples, dropped


def _pad(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def collate(examples: Sequence[Example]) -> Batch:
    names = list(examples[0].targets)
    return Batch(
        source=_pad([e.source for e in examples]),
        source_lengths=torch.tensor([len(e.source) for e in examples]),
        targets={n: _pad([e.targets[n] for e in examples]) for n in names},
        target_lengths={n: torch.tensor([len(e.targets[n]) for e in examples]) for n in names},
        indices=[e.index for e in examples],
    )


def make_batches(examples: Sequence[Example], batch_size: int, seed: int, epoch: int = 0) -> List[Batch]:
    """Length-bucketed batches in a seeded, per-epoch shuffled order."""
    if not examples:
        raise ValueError("cannot batch an empty corpus")
    ordered = sorted(examples, key=lambda e: (len(e.source), e.index))
    groups = [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]
    random.Random(substream_seed(seed, "shuffle", epoch)).shuffle(groups)
    return [collate(g) for g in groups]


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor, pad_mask: Optional[torch.Tensor] = None):
    """Summed negative log-likelihood over non-pad positions and the token count.

    ``logits`` (..., L, V) predict ``targets`` (..., L); callers pass the
    target sequence without its leading BOS.
    """
    if pad_mask is None:
        pad_mask = targets != PAD
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    nll = -(picked * pad_mask.to(picked.dtype)).sum()
    return nll, int(pad_mask.sum())


def combine_losses(parts: Sequence[Tuple[object, int]], mode: str = "mean"):
    """Length-normalize each decoder's loss, then sum and average over decoders."""
    if not parts:
        raise ValueError("no decoder losses to combine")
    terms = []
    for k, (total, count) in enumerate(parts):
        if count <= 0:
            raise ValueError(f"decoder {k} has no target tokens to normalize by")
        terms.append(total / count)
    combined = sum(terms[1:], terms[0])
    return combined / len(parts) if mode == "mean" else combined


def batch_loss(config: ModelConfig, store: ParameterStore, batch: Batch, dropout_seed=None, mode: str = "mean"):
    logits = bmtl_forward(config, store, batch.source, batch.targets, dropout_seed=dropout_seed)
    parts = [sequence_nll(logits[n], batch.targets[n][:, 1:]) for n in config.decoder_names]
    return combine_losses(parts, mode)


def train_step(
    store: ParameterStore,
    adam: AdamState,
    batch: Batch,
    config: ModelConfig,
    train_config: TrainConfig,
    dropout_seed: Optional[int] = None,
) -> float:
    store.zero_grad()
    loss = batch_loss(config, store, batch, dropout_seed, train_config.loss_mode)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite training loss {value} on batch of sentences {batch.indices[:5]}...")
    loss.backward()
    clip_store_gradients(store, train_config.clip)
    adam_step(store, adam)
    store.zero_grad()
    return value


# ------------------------------------------------------------------ evaluation


@dataclass
class DevSet:
    """Encoded dev sources with raw references for scoring."""

    sources: List[List[int]]
    references: List[str]


def evaluate_dev(
    store: ParameterStore,
    config: ModelConfig,
    dev: DevSet,
    target_assets: Mapping[str, SubwordAssets],
    decode_fn: Optional[Callable] = None,
    search: Optional[SearchParams] = None,
) -> Dict[str, float]:
    """Greedy-decode the dev set with every decoder and return BLEU per decoder.

    ``decode_fn(name, sources) -> list of word lists`` overrides the model.
    """
    search = search or SearchParams(beam_size=1)
    scores = {}
    for name in config.decoder_names:
        if decode_fn is not None:
            words = decode_fn(name, dev.sources)
        else:
            hyps = decode_ids(store, config, name, dev.sources, search)
            words = [target_assets[name].decode(h.ids) for h in hyps]
        hyp_lines = [postprocess_tokens(w) for w in words]
        scores[name] = bleu_mod.corpus_bleu(hyp_lines, dev.references).score
    return scores


class EarlyStopping:
    """Fires after ``patience`` consecutive evaluations in which no decoder
    improved its best BLEU."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best: Dict[str, float] = {}
        self.best_update: Dict[str, int] = {}
        self.stale = 0

    def update(self, update: int, scores: Mapping[str, float]) -> bool:
        improved = False
        for name, value in scores.items():
            if name not in self.best or value > self.best[name]:
                self.best[name] = value
                self.best_update[name] = update
                improved = True
        self.stale = 0 if improved else self.stale + 1
        return self.should_stop

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience

    def state(self) -> dict:
        return {"best": dict(self.best), "best_update": dict(self.best_update), "stale": self.stale}

    @classmethod
    def from_state(cls, patience: int, state: dict) -> "EarlyStopping":
        es = cls(patience)
        es.best = dict(state.get("best", {}))
        es.best_update = {k: int(v) for k, v in state.get("best_update", {}).items()}
        es.stale = int(state.get("stale", 0))
        return es


# ------------------------------------------------------------------ checkpoints


class AssetHashError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    store: ParameterStore
    adam: AdamState
    update: int = 0
    assets: Dict[str, dict] = field(default_factory=dict)  # role -> {"path", "sha256"}
    stopper: dict = field(default_factory=dict)
    best_average: float = -1.0


def _config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["decoders"] = [list(x) for x in cfg.decoders]
    return d


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "dtype": dtype_name(ckpt.store.dtype),
        "model_config": _config_to_dict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "update": ckpt.update,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps, "step": ckpt.adam.step},
        "assets": ckpt.assets,
        "stopper": ckpt.stopper,
        "best_average": ckpt.best_average,
    }
    arrays = [(f"param/{n}", p) for n, p in ckpt.store.items()]
    arrays += [(f"adam_m/{n}", ckpt.adam.m[n]) for n in ckpt.store]
    arrays += [(f"adam_v/{n}", ckpt.adam.v[n]) for n in ckpt.store]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_archive(path, manifest, arrays)


def asset_record(prefix) -> dict:
    """Reference to subword assets on disk: path prefix plus content hash."""
    return {"path": str(prefix), "sha256": SubwordAssets.load(prefix).digest}


def load_checkpoint(path, verify_assets: bool = True) -> Checkpoint:
    manifest, arrays = read_archive(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint archive")
    if verify_assets:
        for role, rec in manifest["assets"].items():
            try:
                actual = SubwordAssets.load(rec["path"]).digest
            except OSError as exc:
                raise AssetHashError(f"{path}: cannot read {role} assets at {rec['path']}: {exc}") from None
            if actual != rec["sha256"]:
                raise AssetHashError(f"{path}: {role} assets at {rec['path']} changed since training (hash mismatch)")
    mc = dict(manifest["model_config"])
    mc["decoders"] = tuple(tuple(x) for x in mc["decoders"])
    model_config = ModelConfig(**mc)
    store = ParameterStore(DTYPES[manifest["dtype"]])
    adam_meta = manifest["adam"]
    adam = AdamState(lr=adam_meta["lr"], beta1=adam_meta["beta1"], beta2=adam_meta["beta2"], eps=adam_meta["eps"], step=adam_meta["step"])
    for key, arr in arrays.items():
        kind, name = key.split("/", 1)
        if kind == "param":
            store.params[name] = arr.to(store.dtype).requires_grad_(True)
        elif kind == "adam_m":
            adam.m[name] = arr.to(store.dtype)
        elif kind == "adam_v":
            adam.v[name] = arr.to(store.dtype)
    return Checkpoint(
        model_config=model_config,
        train_config=TrainConfig(**manifest["train_config"]),
        store=store,
        adam=adam,
        update=manifest["update"],
        assets=manifest["assets"],
        stopper=manifest.get("stopper", {}),
        best_average=manifest.get("best_average", -1.0),
    )


# ------------------------------------------------------------------ loop


@dataclass
class TrainResult:
    updates: int
    losses: List[float]
    history: List[Tuple[int, Dict[str, float]]]
    best: Dict[str, float]
    best_update: Dict[str, int]
    stopped_early: bool
    best_snapshot: Optional[Dict[str, torch.Tensor]] = None
    seconds: float = 0.0  # wall time, filled in by the caller


class Trainer:
    """Single-writer training loop.

    Batch order and dropout masks are functions of (seed, update index), so a
    run resumed from a checkpoint continues exactly as an uninterrupted one.
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        store: ParameterStore,
        examples: Sequence[Example],
        dev: Optional[DevSet] = None,
        target_assets: Optional[Mapping[str, SubwordAssets]] = None,
        adam: Optional[AdamState] = None,
        update: int = 0,
        log_file=None,
        stopper_state: Optional[dict] = None,
        asset_refs: Optional[Dict[str, dict]] = None,
    ):
        self.mc, self.tc = model_config, train_config
        self.store = store
        self.examples = list(examples)
        self.dev, self.target_assets = dev, target_assets
        self.adam = adam or AdamState.for_store(
            store, lr=train_config.lr, beta1=train_config.beta1, beta2=train_config.beta2, eps=train_config.eps
        )
        self.update = update
        self.log_file = log_file
        self.stopper = EarlyStopping.from_state(train_config.patience, stopper_state or {})
        self.asset_refs = asset_refs or {}
        self.best_average = -1.0
        self.best_snapshot = None
        self._epoch_cache = (None, None)
        self.n_batches = math.ceil(len(self.examples) / train_config.batch_size)

    def _batch(self, update: int) -> Batch:
        epoch, pos = divmod(update, self.n_batches)
        if self._epoch_cache[0] != epoch:
            self._epoch_cache = (epoch, make_batches(self.examples, self.tc.batch_size, self.tc.seed, epoch))
        return self._epoch_cache[1][pos]

    def _log(self, line: str) -> None:
        if self.log_file is not None:
            self.log_file.write(line + "\n")

    def step(self) -> float:
        batch = self._batch(self.update)
        seed = substream_seed(self.tc.seed, "dropout", self.update)
        loss = train_step(self.store, self.adam, batch, self.mc, self.tc, seed)
        self.update += 1
        self._log(f"{self.update}\t{loss:.8f}")
        return loss

    def evaluate(self) -> Dict[str, float]:
        scores = evaluate_dev(self.store, self.mc, self.dev, self.target_assets)
        for name in self.mc.decoder_names:
            self._log(f"eval\t{self.update}\t{name}\t{scores[name]:.2f}")
        return scores

    def run(self, max_updates: Optional[int] = None) -> TrainResult:
        limit = self.tc.max_updates if max_updates is None else max_updates
        losses, history = [], []
        stopped = False
        while self.update < limit:
            losses.append(self.step())
            if self.dev is not None and self.update % self.tc.eval_every == 0:
                scores = self.evaluate()
                history.append((self.update, scores))
                before = dict(self.stopper.best)
                self.stopper.update(self.update, scores)
                if self.tc.decay_reading == "lr" and all(
                    scores[n] <= before.get(n, -1.0) for n in scores
                ):
                    self.adam.lr *= self.tc.lr_decay
                average = sum(scores.values()) / len(scores)
                if average > self.best_average:
                    self.best_average = average
                    self.best_snapshot = self.store.snapshot()
                if self.stopper.should_stop:
                    stopped = True
                    break
                if self.tc.target_bleu is not None and all(v >= self.tc.target_bleu for v in scores.values()):
                    stopped = True
                    break
        return TrainResult(
            updates=self.update,
            losses=losses,
            history=history,
            best=dict(self.stopper.best),
            best_update=dict(self.stopper.best_update),
            stopped_early=stopped,
            best_snapshot=self.best_snapshot,
        )

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            self.mc, self.tc, self.store, self.adam, self.update, self.asset_refs, self.stopper.state(), self.best_average
        )

    @classmethod
    def resume(cls, ckpt: Checkpoint, examples, dev=None, target_assets=None, log_file=None) -> "Trainer":
        t = cls(
            ckpt.model_config,
            ckpt.train_config,
            ckpt.store,
            examples,
            dev,
            target_assets,
            adam=ckpt.adam,
            update=ckpt.update,
            log_file=log_file,
            stopper_state=ckpt.stopper,
            asset_refs=ckpt.assets,
        )
        t.best_average = ckpt.best_average
        return t
