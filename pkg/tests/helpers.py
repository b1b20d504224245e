"""Shared builders for model-level tests."""

import torch

from bmtl.neuralcore import generator
from bmtl.seq2seq import ModelConfig, bmtl_forward, init_parameters
from bmtl.training import combine_losses, sequence_nll


def randomize(store, seed: int, scale: float = 1.0):
    """Overwrite every parameter with uniform(-scale, scale) draws.

    Glorot-initialized biases are zero and many products start near zero,
    which leaves some gradient entries far below the finite-difference
    noise floor; a generic random point avoids that.
    """
    g = generator(seed)
    with torch.no_grad():
        for _, p in store.items():
            p.copy_((torch.rand(p.shape, generator=g, dtype=torch.float64) * 2 - 1) * scale)
    return store


def tiny_config(decoders=(("a", 5), ("b", 6)), **kw):
    dims = dict(emb_dim=3, enc_hidden=3, enc_layers=2, dec_hidden=4, dropout=0.0, attention_dim=3)
    dims.update(kw)
    return ModelConfig(6, tuple(decoders), **dims)


def tiny_batch():
    source = torch.tensor([[1, 4, 5, 2], [1, 3, 2, 0]])
    targets = {
        "a": torch.tensor([[1, 4, 3, 2], [1, 3, 2, 0]]),
        "b": torch.tensor([[1, 5, 4, 2], [1, 3, 2, 0]]),
        "c": torch.tensor([[1, 3, 3, 2], [1, 4, 2, 0]]),
    }
    return source, targets


def combined_loss_fn(config, source, targets, mode="mean"):
    def loss_fn(store):
        out = bmtl_forward(config, store, source, targets)
        return combine_losses([sequence_nll(out[n], targets[n][:, 1:]) for n in config.decoder_names], mode)

    return loss_fn


def model(config, seed=0, dtype=torch.float64):
    return init_parameters(config, seed, dtype)
