"""End-to-end gradient verification on a tiny model.

The fixture is small enough (vocab 8, hidden 16, one block per encoder,
5 phonemes, 16 mel frames) that central differences over every parameter
entry finish in well under a minute, while still exercising every
primitive the full model uses: embedding, attention, layer norm, both
convolution shapes, length regulation, the gradient-stopped duration
branch, and both losses.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import grad_check
from .losses import loss_dis, loss_dur
from .network import ModelConfig, TaemParams, init_params, taem_forward
from .textalign import PhonemeSequence

TOLERANCE = 1e-4


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=8,
        hidden=16,
        heads=2,
        g_blocks=1,
        h_blocks=1,
        dropout=0.0,  # finite differences need a deterministic forward
        vocab_version="gradcheck-tiny",
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_fixture(seed: int, cfg: ModelConfig | None = None, l_t: int = 5, l_a: int = 16):
    """Deterministic (sequence, speaker, durations, targets) for the check."""
    cfg = cfg or tiny_config()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 777])))
    ids = rng.integers(0, cfg.vocab_size, size=l_t)
    seq = PhonemeSequence(ids=ids.astype(np.int64), vocab_version=cfg.vocab_version)
    speaker = rng.standard_normal(cfg.hidden)
    cuts = np.sort(rng.choice(np.arange(1, l_a), size=l_t - 1, replace=False))
    durations = np.diff(np.concatenate([[0], cuts, [l_a]])).astype(np.int64)
    targets = rng.standard_normal((l_a // 4, cfg.hidden))
    return seq, speaker, durations, targets


def run_gradcheck(seed: int, epsilon: float = 1e-4, cfg: ModelConfig | None = None) -> float:
    """Max relative gradient error of L_dis + L_dur over all parameters."""
    cfg = cfg or tiny_config()
    if cfg.dropout != 0.0:
        raise ValueError("gradcheck requires dropout=0 (deterministic forward)")
    seq, speaker, durations, targets = tiny_fixture(seed, cfg)
    params = init_params(cfg, master_seed=seed)

    def objective(tensors):
        p = TaemParams(config=cfg, tensors=tensors)
        z_t, pred = taem_forward(seq, speaker, p, durations=durations)
        return ad.add(loss_dis(z_t, targets), loss_dur(pred, durations))

    return grad_check(objective, params.tensors, epsilon=epsilon)
