"""Flat ``key=value`` experiment configuration."""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


PATH_KEYS = ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt", "output_dir")


@dataclass
class ExperimentConfig:
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    output_dir: str = "run"

    src_bpe: int = 10000
    tgt_bpe: Tuple[int, ...] = (300, 1000, 10000)

    emb_dim: int = 512
    enc_hidden: int = 512
    enc_layers: int = 2
    dec_hidden: int = 1024
    attention_dim: int = 0  # 0: same as dec_hidden
    dropout: float = 0.1

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_reading: str = "beta1"
    lr_decay: float = 0.9
    batch_size: int = 32
    clip: float = 1.0
    loss_mode: str = "mean"
    max_updates: int = 100000
    eval_every: int = 1000
    patience: int = 5
    max_len: int = 100
    target_bleu: float = 0.0  # 0 disables

    beam_size: int = 4
    length_alpha: float = 1.0

    combine_beam: int = 32
    combine_radius: int = 3
    w_lm: float = 1.0
    w_sys: float = 1.0
    w_len: float = 0.0
    lm_order: int = 3
    lm_lambdas: Tuple[float, ...] = (0.5, 0.3, 0.15, 0.05)

    train_baselines: bool = True
    seed: int = 1
    threads: int = 1

    @property
    def decoder_names(self) -> List[str]:
        return [f"bpe{b}" for b in self.tgt_bpe]

    def validate(self, require_files: bool = True) -> "ExperimentConfig":
        if not self.tgt_bpe:
            raise ConfigError("tgt_bpe", "at least one decoder granularity is required")
        if len(set(self.tgt_bpe)) != len(self.tgt_bpe):
            raise ConfigError("tgt_bpe", "granularities must be distinct")
        for b in (self.src_bpe,) + tuple(self.tgt_bpe):
            if b <= 0:
                raise ConfigError("tgt_bpe" if b != self.src_bpe else "src_bpe", f"granularity must be positive, got {b}")
        for name in ("emb_dim", "enc_hidden", "enc_layers", "dec_hidden", "batch_size", "eval_every", "beam_size", "lm_order", "threads"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, "must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout", "must be in [0, 1)")
        if self.loss_mode not in ("mean", "sum"):
            raise ConfigError("loss_mode", "must be 'mean' or 'sum'")
        if self.decay_reading not in ("beta1", "lr"):
            raise ConfigError("decay_reading", "must be 'beta1' or 'lr'")
        if len(self.lm_lambdas) != self.lm_order + 1 or abs(sum(self.lm_lambdas) - 1.0) > 1e-9:
            raise ConfigError("lm_lambdas", f"need {self.lm_order + 1} weights summing to 1")
        if require_files:
            for key in PATH_KEYS[:-1]:
                value = getattr(self, key)
                if not value:
                    raise ConfigError(key, "is required")
                if not Path(value).is_file():
                    raise ConfigError(key, f"file not found: {value}")
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    default = getattr(ExperimentConfig(), key)
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def parse_config(text: str, base_dir: Optional[Path] = None, cfg: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Parse config text, resolving relative paths against ``base_dir``."""
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, raw = (x.strip() for x in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        value = _parse_value(key, raw)
        if key in PATH_KEYS and base_dir is not None and value and not Path(value).is_absolute():
            value = str(Path(base_dir) / value)
        setattr(cfg, key, value)
    return cfg


def load_config(path, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    cfg = parse_config(text, path.parent)
    # Overrides come from the command line, so their paths are relative to the cwd.
    return parse_config("\n".join(overrides or []), None, cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(x) for x in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
