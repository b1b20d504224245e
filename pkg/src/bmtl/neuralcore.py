"""Parameter storage, differentiable primitives, Adam and gradient checking.

Tensors and reverse-mode differentiation come from torch; everything the
training loop relies on for its numerics (masked softmax, clipping, the
Adam update, initialization, serialization) is defined here so the
behaviour is pinned independently of torch's optimizer implementations.
"""

import hashlib
import io
import json
import math
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

ARCHIVE_VERSION = 1
DTYPES = {"float32": torch.float32, "float64": torch.float64}
_NP_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
# Fixed zip timestamp so identical archives are byte-identical.
_ZIP_EPOCH = (2020, 1, 1, 0, 0, 0)


class ArchiveError(Exception):
    pass


class TruncatedArchiveError(ArchiveError):
    pass


class ArchiveVersionError(ArchiveError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def substream_seed(master: int, *names) -> int:
    """Derive an independent 63-bit seed for a named random substream."""
    key = ":".join([str(master)] + [str(n) for n in names]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def dtype_name(dtype: torch.dtype) -> str:
    for name, dt in DTYPES.items():
        if dt == dtype:
            return name
    raise ValueError(f"unsupported dtype {dtype}")


class ParameterStore:
    """Named trainable tensors; each tensor's ``.grad`` is its gradient buffer."""

    def __init__(self, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self.params: "OrderedDict[str, torch.Tensor]" = OrderedDict()

    def add(self, name: str, shape: Sequence[int], init: str = "glorot", seed: int = 0) -> torch.Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            value = torch.zeros(shape, dtype=torch.float64)
        elif init == "glorot":
            fan_out = shape[0]
            fan_in = shape[1] if len(shape) > 1 else 1
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            value = torch.rand(shape, generator=generator(substream_seed(seed, "init", name)), dtype=torch.float64)
            value = (2.0 * value - 1.0) * bound
        else:
            raise ValueError(f"unknown initializer {init!r}")
        tensor = value.to(self.dtype).requires_grad_(True)
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def numel(self, prefix: str = "") -> int:
        return sum(p.numel() for n, p in self.params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def gradients(self) -> Dict[str, torch.Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in self.params.items()}

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.params.items()}

    def load_snapshot(self, values: Dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for n, p in self.params.items():
                p.copy_(values[n])

    def copy(self, dtype: Optional[torch.dtype] = None) -> "ParameterStore":
        out = ParameterStore(dtype or self.dtype)
        for n, p in self.params.items():
            out.params[n] = p.detach().clone().to(out.dtype).requires_grad_(True)
        return out


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> "AdamState":
        state = cls(**hyper)
        for n, p in store.items():
            state.m[n] = torch.zeros_like(p, requires_grad=False)
            state.v[n] = torch.zeros_like(p, requires_grad=False)
        return state


def softmax(scores: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over the last axis; masked-out (False) entries get exactly 0."""
    if mask is None:
        shifted = scores - scores.max(dim=-1, keepdim=True).values
        e = shifted.exp()
        return e / e.sum(dim=-1, keepdim=True)
    mask = mask.to(torch.bool)
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("softmax over a fully masked row")
    masked = scores.masked_fill(~mask, float("-inf"))
    shifted = masked - masked.max(dim=-1, keepdim=True).values
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def log_softmax(logits: torch.Tensor) -> torch.Tensor:
    shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
    return shifted - shifted.exp().sum(dim=-1, keepdim=True).log()


def cross_entropy(logits: torch.Tensor, target: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Loss ``-log softmax(logits)[target]`` and its gradient w.r.t. the logits."""
    logits = torch.as_tensor(logits)
    if not 0 <= int(target) < logits.shape[-1]:
        raise IndexError(f"target {target} out of range for {logits.shape[-1]} classes")
    probs = softmax(logits.detach())
    loss = -log_softmax(logits.detach())[int(target)]
    grad = probs.clone()
    grad[int(target)] -= 1.0
    return loss, grad


def global_norm(gradients: Iterable[torch.Tensor]) -> float:
    total = 0.0
    for g in gradients:
        total += float((g.double() ** 2).sum())
    return math.sqrt(total)


def clip_global_norm(gradients: Sequence[torch.Tensor], threshold: float):
    """Scale all gradients by ``threshold / norm`` when their joint L2 norm exceeds it.

    Returns ``(clipped, norm_before)``; the inputs are not modified.
    """
    if threshold <= 0:
        raise ValueError("clipping threshold must be positive")
    norm = global_norm(gradients)
    if norm > threshold:
        scale = threshold / norm
        return [g * scale for g in gradients], norm
    return [g.clone() for g in gradients], norm


def clip_store_gradients(store: ParameterStore, threshold: float) -> float:
    """In-place variant of :func:`clip_global_norm` over a store's gradient buffers."""
    grads = [p.grad for _, p in store.items() if p.grad is not None]
    clipped, norm = clip_global_norm(grads, threshold)
    if norm > threshold:
        for g, c in zip(grads, clipped):
            g.copy_(c)
    return norm


def adam_step(store: ParameterStore, state: AdamState) -> None:
    if set(state.m) != set(store.params):
        raise ValueError("Adam state does not match the parameter store")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    with torch.no_grad():
        for name, p in store.items():
            m, v = state.m[name], state.v[name]
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"Adam accumulator shape mismatch for {name}: {tuple(m.shape)} vs {tuple(p.shape)}")
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            update = (m / corr1) / ((v / corr2).sqrt() + state.eps)
            p.sub_(state.lr * update)


def dropout(x: torch.Tensor, p: float, gen: Optional[torch.Generator]) -> torch.Tensor:
    """Inverted dropout; identity when ``gen`` is None (inference) or ``p == 0``."""
    if gen is None or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=gen, dtype=torch.float64) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


@dataclass
class GradientReport:
    max_rel_error: float
    worst: Tuple[str, int]
    per_parameter: Dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check_gradients(
    loss_fn: Callable[[ParameterStore], torch.Tensor],
    store: ParameterStore,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    analytic: Optional[Dict[str, torch.Tensor]] = None,
) -> GradientReport:
    """Compare analytic gradients with central finite differences on every entry.

    ``loss_fn`` must be deterministic.  When ``analytic`` is given it replaces
    the backpropagated gradients (used for negative controls).
    """
    if store.dtype != torch.float64:
        raise ValueError("gradient checking requires a float64 parameter store")
    if analytic is None:
        store.zero_grad()
        loss = loss_fn(store)
        if not torch.isfinite(loss):
            raise NonFiniteError("loss is not finite")
        loss.backward()
        analytic = {n: g.detach().clone() for n, g in store.gradients().items()}
        store.zero_grad()

    worst_err, worst = 0.0, ("", -1)
    per_param = {}
    with torch.no_grad():
        for name, p in store.items():
            a = analytic[name].reshape(-1)
            if not bool(torch.isfinite(a).all()):
                raise NonFiniteError(f"non-finite analytic gradient in {name}")
            flat = p.view(-1)
            err_max = 0.0
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss_fn(store))
                flat[i] = orig - step
                down = float(loss_fn(store))
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NonFiniteError(f"non-finite loss while perturbing {name}[{i}]")
                num = (up - down) / (2.0 * step)
                ai = float(a[i])
                err = abs(ai - num) / max(abs(ai), abs(num), 1e-8)
                err_max = max(err_max, err)
                if err > worst_err:
                    worst_err, worst = err, (name, i)
            per_param[name] = err_max
    return GradientReport(worst_err, worst, per_param, tolerance)


def write_archive(path, manifest: dict, arrays: Sequence[Tuple[str, torch.Tensor]]) -> None:
    """Write a manifest plus little-endian raw arrays (in manifest order) to a zip archive."""
    entries = []
    blob = io.BytesIO()
    for name, tensor in arrays:
        t = tensor.detach().cpu()
        kind = "int64" if t.dtype == torch.int64 else dtype_name(t.dtype)
        data = np.ascontiguousarray(t.numpy()).astype(_NP_DTYPES[kind], copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": kind, "nbytes": len(data)})
        blob.write(data)
    full = dict(manifest)
    full["version"] = ARCHIVE_VERSION
    full["arrays"] = entries
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for member, payload in (
            ("manifest.json", json.dumps(full, sort_keys=True, indent=1).encode("utf-8")),
            ("arrays.bin", blob.getvalue()),
        ):
            info = zipfile.ZipInfo(member, date_time=_ZIP_EPOCH)
            zf.writestr(info, payload)


def read_archive(path) -> Tuple[dict, "OrderedDict[str, torch.Tensor]"]:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
            blob = zf.read("arrays.bin")
    except (zipfile.BadZipFile, KeyError, EOFError) as exc:
        raise TruncatedArchiveError(f"{path}: unreadable or truncated archive ({exc})") from None
    if manifest.get("version") != ARCHIVE_VERSION:
        raise ArchiveVersionError(f"{path}: archive version {manifest.get('version')} != {ARCHIVE_VERSION}")
    arrays = OrderedDict()
    offset = 0
    for entry in manifest["arrays"]:
        end = offset + entry["nbytes"]
        if end > len(blob):
            raise TruncatedArchiveError(f"{path}: array {entry['name']} extends past end of data")
        arr = np.frombuffer(blob[offset:end], dtype=_NP_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        arrays[entry["name"]] = torch.from_numpy(arr.copy())
        offset = end
    return manifest, arrays


def save_parameters(path, store: ParameterStore, manifest: Optional[dict] = None) -> None:
    meta = dict(manifest or {})
    meta["dtype"] = dtype_name(store.dtype)
    write_archive(path, meta, [(n, p) for n, p in store.items()])


def load_parameters(path) -> ParameterStore:
    manifest, arrays = read_archive(path)
    store = ParameterStore(DTYPES[manifest["dtype"]])
    for name, arr in arrays.items():
        store.params[name] = arr.to(store.dtype).requires_grad_(True)
    return store
