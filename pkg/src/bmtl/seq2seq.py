"""Shared-encoder, multi-decoder attention model.

One embedding table and a stack of bidirectional GRU layers encode the
source once; each decoder is a conditional GRU (GRU, then MLP attention,
then a second GRU) with its own embeddings, attention and deep-output
layer.  A configuration with a single decoder is the plain
encoder-decoder baseline.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from .neuralcore import NonFiniteError, ParameterStore, dropout, generator, softmax
from .subword import PAD


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    decoders: Tuple[Tuple[str, int], ...]
    emb_dim: int = 512
    enc_hidden: int = 512
    enc_layers: int = 2
    dec_hidden: int = 1024
    dropout: float = 0.1
    attention_dim: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "decoders", tuple((str(n), int(v)) for n, v in self.decoders))
        if not self.decoders:
            raise ValueError("a model needs at least one decoder")
        names = [n for n, _ in self.decoders]
        if len(set(names)) != len(names):
            raise ValueError(f"decoder names must be unique: {names}")
        for label, value in [
            ("src_vocab_size", self.src_vocab_size),
            ("emb_dim", self.emb_dim),
            ("enc_hidden", self.enc_hidden),
            ("enc_layers", self.enc_layers),
            ("dec_hidden", self.dec_hidden),
            ("attention_dim", self.att_dim),
        ] + [(f"vocab size of decoder {n}", v) for n, v in self.decoders]:
            if value <= 0:
                raise ValueError(f"{label} must be positive, got {value}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def att_dim(self) -> int:
        return self.attention_dim or self.dec_hidden

    @property
    def ctx_dim(self) -> int:
        return 2 * self.enc_hidden

    @property
    def decoder_names(self) -> List[str]:
        return [n for n, _ in self.decoders]

    def vocab_size(self, name: str) -> int:
        return dict(self.decoders)[name]

    def single(self, name: str) -> "ModelConfig":
        """The single-decoder baseline matching decoder ``name``."""
        return replace(self, decoders=((name, self.vocab_size(name)),))


@dataclass
class EncoderOutput:
    states: torch.Tensor  # (batch, T, 2 * enc_hidden)
    mask: torch.Tensor  # (batch, T) bool

    def select(self, rows: torch.Tensor) -> "EncoderOutput":
        return EncoderOutput(self.states.index_select(0, rows), self.mask.index_select(0, rows))


@dataclass
class DecoderState:
    hidden: torch.Tensor  # (batch, dec_hidden)
    context: Optional[torch.Tensor] = None  # (batch, 2 * enc_hidden)
    last_token: Optional[torch.Tensor] = None  # (batch,)


# ---------------------------------------------------------------- parameters


def _gru_shapes(prefix: str, n_in: int, n_hid: int):
    return [
        (f"{prefix}.W", (3 * n_hid, n_in), "glorot"),
        (f"{prefix}.U_zr", (2 * n_hid, n_hid), "glorot"),
        (f"{prefix}.U_h", (n_hid, n_hid), "glorot"),
        (f"{prefix}.b", (3 * n_hid,), "zeros"),
    ]


def encoder_shapes(config: ModelConfig):
    shapes = [("src.emb", (config.src_vocab_size, config.emb_dim), "glorot")]
    n_in = config.emb_dim
    for layer in range(config.enc_layers):
        for direction in ("fw", "bw"):
            shapes += _gru_shapes(f"enc.l{layer}.{direction}", n_in, config.enc_hidden)
        n_in = config.ctx_dim
    return shapes


def decoder_shapes(config: ModelConfig, name: str):
    p = f"dec.{name}"
    V, E, D, C, A = config.vocab_size(name), config.emb_dim, config.dec_hidden, config.ctx_dim, config.att_dim
    return (
        [
            (f"{p}.emb", (V, E), "glorot"),
            (f"{p}.init.W", (D, C), "glorot"),
            (f"{p}.init.b", (D,), "zeros"),
        ]
        + _gru_shapes(f"{p}.gru1", E, D)
        + [
            (f"{p}.att.W", (A, D), "glorot"),
            (f"{p}.att.U", (A, C), "glorot"),
            (f"{p}.att.v", (A,), "glorot"),
        ]
        + _gru_shapes(f"{p}.gru2", C, D)
        + [
            (f"{p}.out.W_s", (E, D), "glorot"),
            (f"{p}.out.W_c", (E, C), "glorot"),
            (f"{p}.out.W_e", (E, E), "glorot"),
            (f"{p}.out.b", (E,), "zeros"),
            (f"{p}.out.W_o", (V, E), "glorot"),
            (f"{p}.out.b_o", (V,), "zeros"),
        ]
    )


def init_parameters(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> ParameterStore:
    """Allocate and seed all parameters.

    Each tensor draws from its own substream keyed by its name, so the
    encoder and decoder ``k`` of a multitask model start from exactly the
    same values as the corresponding single-decoder baseline.
    """
    store = ParameterStore(dtype)
    shapes = encoder_shapes(config)
    for name, _ in config.decoders:
        shapes += decoder_shapes(config, name)
    for pname, shape, init in shapes:
        store.add(pname, shape, init, seed)
    return store


def _gru_count(n_in: int, n_hid: int) -> int:
    return 3 * n_hid * n_in + 3 * n_hid * n_hid + 3 * n_hid


def count_parameters(config: ModelConfig) -> Dict[str, int]:
    """Closed-form trainable-parameter counts per component."""
    E, H, D, C, A = config.emb_dim, config.enc_hidden, config.dec_hidden, config.ctx_dim, config.att_dim
    counts = {"source_embedding": config.src_vocab_size * E}
    enc = 2 * _gru_count(E, H) + 2 * (config.enc_layers - 1) * _gru_count(C, H)
    counts["encoder"] = enc
    for name, V in config.decoders:
        counts[f"decoder:{name}"] = (
            V * E  # target embedding
            + D * C + D  # initial state
            + _gru_count(E, D)
            + A * D + A * C + A  # attention
            + _gru_count(C, D)
            + E * D + E * C + E * E + E  # deep output hidden layer
            + V * E + V  # output projection
        )
    counts["total"] = sum(counts.values())
    return counts


# ------------------------------------------------------------------ encoder


def _gru(store: ParameterStore, prefix: str, x_proj: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """One GRU step given the precomputed input projection ``W x + b``."""
    n = h.shape[-1]
    hzr = h @ store[f"{prefix}.U_zr"].t()
    z = torch.sigmoid(x_proj[..., :n] + hzr[..., :n])
    r = torch.sigmoid(x_proj[..., n : 2 * n] + hzr[..., n:])
    cand = torch.tanh(x_proj[..., 2 * n :] + (r * h) @ store[f"{prefix}.U_h"].t())
    return (1.0 - z) * h + z * cand


def _input_proj(store: ParameterStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    return x @ store[f"{prefix}.W"].t() + store[f"{prefix}.b"]


def _as_batch(ids, dtype=torch.long) -> torch.Tensor:
    t = torch.as_tensor(ids, dtype=dtype)
    return t.unsqueeze(0) if t.dim() == 1 else t


def _check_ids(ids: torch.Tensor, size: int, what: str) -> None:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= size):
        bad = int(ids.max()) if int(ids.max()) >= size else int(ids.min())
        raise IndexError(f"{what} id {bad} out of range for vocabulary of size {size}")


def encode_source(
    config: ModelConfig,
    store: ParameterStore,
    source,
    mask: Optional[torch.Tensor] = None,
    gen: Optional[torch.Generator] = None,
) -> EncoderOutput:
    """Run the stacked BiGRU over padded source ids of shape (batch, T)."""
    src = _as_batch(source)
    _check_ids(src, config.src_vocab_size, "source")
    if mask is None:
        mask = src != PAD
    mask = _as_batch(mask, torch.bool)
    B, T = src.shape
    H = config.enc_hidden
    m = mask.to(store.dtype).unsqueeze(-1)  # (B, T, 1)

    x = store["src.emb"][src]
    for layer in range(config.enc_layers):
        outputs = []
        for direction in ("fw", "bw"):
            prefix = f"enc.l{layer}.{direction}"
            proj = _input_proj(store, prefix, x)
            h = x.new_zeros(B, H)
            states: List[Optional[torch.Tensor]] = [None] * T
            steps = range(T) if direction == "fw" else range(T - 1, -1, -1)
            for t in steps:
                h_new = _gru(store, prefix, proj[:, t], h)
                # Padded steps keep the previous state, so the backward pass
                # starts from zero at each sentence's true end.
                h = m[:, t] * h_new + (1.0 - m[:, t]) * h
                states[t] = h
            outputs.append(torch.stack(states, dim=1))
        x = torch.cat(outputs, dim=-1) * m
    return EncoderOutput(dropout(x, config.dropout, gen), mask)


# ------------------------------------------------------------------ decoder


def attention_weights(
    store: ParameterStore, prefix: str, query: torch.Tensor, enc: EncoderOutput, enc_proj: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """MLP attention: ``score_j = v . tanh(W_a query + U_a e_j)``, masked softmax over j."""
    if enc_proj is None:
        enc_proj = enc.states @ store[f"{prefix}.att.U"].t()
    q = query @ store[f"{prefix}.att.W"].t()
    scores = torch.tanh(q.unsqueeze(1) + enc_proj) @ store[f"{prefix}.att.v"]
    return softmax(scores, enc.mask)


def initial_state(store: ParameterStore, prefix: str, enc: EncoderOutput) -> torch.Tensor:
    m = enc.mask.to(enc.states.dtype).unsqueeze(-1)
    mean = (enc.states * m).sum(1) / m.sum(1).clamp(min=1.0)
    return torch.tanh(mean @ store[f"{prefix}.init.W"].t() + store[f"{prefix}.init.b"])


def _cgru(store, prefix, s, emb_proj, enc, enc_proj):
    s1 = _gru(store, f"{prefix}.gru1", emb_proj, s)
    alpha = attention_weights(store, prefix, s1, enc, enc_proj)
    ctx = torch.bmm(alpha.unsqueeze(1), enc.states).squeeze(1)
    s2 = _gru(store, f"{prefix}.gru2", _input_proj(store, f"{prefix}.gru2", ctx), s1)
    return s2, ctx


def _readout(store, prefix, s, ctx, emb, p, gen):
    hid = torch.tanh(
        s @ store[f"{prefix}.out.W_s"].t()
        + ctx @ store[f"{prefix}.out.W_c"].t()
        + emb @ store[f"{prefix}.out.W_e"].t()
        + store[f"{prefix}.out.b"]
    )
    hid = dropout(hid, p, gen)
    return hid @ store[f"{prefix}.out.W_o"].t() + store[f"{prefix}.out.b_o"]


def conditional_gru_step(
    config: ModelConfig,
    store: ParameterStore,
    name: str,
    prev: DecoderState,
    prev_emb: torch.Tensor,
    enc: EncoderOutput,
    enc_proj: Optional[torch.Tensor] = None,
) -> Tuple[DecoderState, torch.Tensor]:
    """Advance decoder ``name`` by one token; returns the new state and the logits."""
    prefix = f"dec.{name}"
    if enc_proj is None:
        enc_proj = enc.states @ store[f"{prefix}.att.U"].t()
    emb_proj = _input_proj(store, f"{prefix}.gru1", prev_emb)
    s, ctx = _cgru(store, prefix, prev.hidden, emb_proj, enc, enc_proj)
    logits = _readout(store, prefix, s, ctx, prev_emb, 0.0, None)
    if not bool(torch.isfinite(logits).all()):
        raise NonFiniteError(f"non-finite logits in decoder {name}")
    return DecoderState(s, ctx, prev.last_token), logits


def decoder_forward(
    config: ModelConfig,
    store: ParameterStore,
    name: str,
    enc: EncoderOutput,
    target_in: torch.Tensor,
    gen: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Teacher-forced logits (batch, L, V) for the given decoder inputs (batch, L)."""
    prefix = f"dec.{name}"
    target_in = _as_batch(target_in)
    _check_ids(target_in, config.vocab_size(name), f"decoder {name} target")
    emb = store[f"{prefix}.emb"][target_in]
    emb_proj = _input_proj(store, f"{prefix}.gru1", emb)
    enc_proj = enc.states @ store[f"{prefix}.att.U"].t()
    s = initial_state(store, prefix, enc)
    states, ctxs = [], []
    for t in range(target_in.shape[1]):
        s, ctx = _cgru(store, prefix, s, emb_proj[:, t], enc, enc_proj)
        states.append(s)
        ctxs.append(ctx)
    return _readout(store, prefix, torch.stack(states, 1), torch.stack(ctxs, 1), emb, config.dropout, gen)


def bmtl_forward(
    config: ModelConfig,
    store: ParameterStore,
    source,
    targets: Mapping[str, torch.Tensor],
    source_mask: Optional[torch.Tensor] = None,
    dropout_seed: Optional[int] = None,
) -> Dict[str, torch.Tensor]:
    """Encode once, then run every decoder with teacher forcing on its own target.

    ``targets[name]`` holds full id sequences (BOS ... EOS, PAD-padded); the
    returned logits for each decoder predict positions 1..L-1.
    """
    for name in config.decoder_names:
        if name not in targets:
            raise KeyError(f"no target sequence given for decoder {name!r}")
    gen = generator(dropout_seed) if dropout_seed is not None and config.dropout > 0 else None
    enc = encode_source(config, store, source, source_mask, gen)
    out = {}
    for name in config.decoder_names:
        tgt = _as_batch(targets[name])
        out[name] = decoder_forward(config, store, name, enc, tgt[:, :-1], gen)
    return out


class DecoderStepper:
    """Incremental decoding of one decoder against a fixed encoding.

    ``step`` takes hidden states and previous tokens for ``n`` partial
    hypotheses plus the encoder row each belongs to, and returns the next
    log-probabilities and hidden states.
    """

    def __init__(self, config: ModelConfig, store: ParameterStore, name: str, enc: EncoderOutput):
        if name not in config.decoder_names:
            raise KeyError(f"unknown decoder {name!r}")
        self.config, self.store, self.name, self.enc = config, store, name, enc
        self.prefix = f"dec.{name}"
        self.vocab_size = config.vocab_size(name)
        with torch.no_grad():
            self.enc_proj = enc.states @ store[f"{self.prefix}.att.U"].t()
            self.h0 = initial_state(store, self.prefix, enc)

    @classmethod
    def from_source(cls, config, store, name, source, mask=None):
        with torch.no_grad():
            enc = encode_source(config, store, source, mask)
        return cls(config, store, name, enc)

    def initial(self) -> torch.Tensor:
        return self.h0

    def step(self, hidden: torch.Tensor, prev_tokens: torch.Tensor, rows: Optional[torch.Tensor] = None):
        with torch.no_grad():
            if rows is None:
                enc, enc_proj = self.enc, self.enc_proj
            else:
                enc, enc_proj = self.enc.select(rows), self.enc_proj.index_select(0, rows)
            emb = self.store[f"{self.prefix}.emb"][prev_tokens]
            state, logits = conditional_gru_step(
                self.config, self.store, self.name, DecoderState(hidden), emb, enc, enc_proj
            )
            return torch.log_softmax(logits.double(), dim=-1), state.hidden
