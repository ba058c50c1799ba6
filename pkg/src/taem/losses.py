"""Distillation, duration, and contrastive objectives, plus the oracle
target encoder that stands in for a pretrained audio encoder.

The oracle encoder is a frozen random projection: it flattens each group
of 4 consecutive log-mel frames, applies a seed-determined
(4*n_mels) x out_dim matrix scaled by 1/sqrt(4*n_mels), and squashes with
tanh.  It is never trained; it exists so the distillation target space is
deterministic and reproducible from a single integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import MelSpectrogram


@dataclass(frozen=True)
class OracleEncoderSpec:
    seed: int
    n_mels: int = 80
    out_dim: int = 512


def oracle_projection(spec: OracleEncoderSpec) -> np.ndarray:
    """The fixed (4*n_mels) x out_dim projection, fully determined by the seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed])))
    fan_in = 4 * spec.n_mels
    return rng.standard_normal((fan_in, spec.out_dim)) / np.sqrt(fan_in)


def oracle_targets(mel: MelSpectrogram | np.ndarray, spec: OracleEncoderSpec) -> np.ndarray:
    """Target features z_a, one row per group of 4 mel frames."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    l_a, n_mels = frames.shape
    if n_mels != spec.n_mels:
        raise ValueError(f"mel has {n_mels} bins, oracle expects {spec.n_mels}")
    if l_a % 4 != 0:
        raise ValueError(f"oracle_targets: l_a={l_a} not divisible by 4")
    windows = frames.astype(np.float64).reshape(l_a // 4, 4 * n_mels)
    z = np.tanh(windows @ oracle_projection(spec))
    return z.astype(np.float32)


def loss_dis(z_t: Tensor, z_a: np.ndarray) -> Tensor:
    """Mean over frames of the squared Euclidean distance to the target.

    The normalizer is the frame count only; the per-frame squared norm
    sums over all feature dimensions.
    """
    target = np.asarray(z_a, dtype=z_t.data.dtype)
    if z_t.shape != target.shape:
        raise ad.ShapeMismatchError(
            f"loss_dis: shapes {z_t.shape} and {target.shape} do not conform"
        )
    l_v = target.shape[0]
    diff = ad.add(z_t, Tensor(-target))
    return ad.mul(ad.sum_all(ad.mul(diff, diff)), 1.0 / l_v)


def loss_dur(pred: Tensor, gt_durations: np.ndarray) -> Tensor:
    """Squared-norm duration error (a sum, not a mean).

    ``pred`` is the raw (l_t, 1) predictor output; its input was
    gradient-stopped, so this loss trains the predictor alone.
    """
    gt = np.asarray(gt_durations, dtype=pred.data.dtype).reshape(-1, 1)
    if pred.shape != gt.shape:
        raise ad.ShapeMismatchError(
            f"loss_dur: {pred.shape} predictions vs {gt.shape} ground truth"
        )
    diff = ad.add(pred, Tensor(-gt))
    return ad.sum_all(ad.mul(diff, diff))


def loss_contrastive(z_t: Tensor, z_a: np.ndarray, temperature: float = 0.07) -> Tensor:
    """Symmetric InfoNCE over frames.

    Frame i of z_t and frame i of z_a form the positive pair; every other
    target frame in the batch is a negative.  Similarity is cosine over
    temperature; both retrieval directions are averaged.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    target = np.asarray(z_a, dtype=z_t.data.dtype)
    if z_t.shape != target.shape:
        raise ad.ShapeMismatchError(
            f"loss_contrastive: shapes {z_t.shape} and {target.shape} do not conform"
        )
    n = target.shape[0]
    if n < 2:
        raise ValueError("loss_contrastive: need at least 2 frames for negatives")
    tn = ad.l2_normalize_rows(z_t)
    an = ad.l2_normalize_rows(Tensor(target))
    logits = ad.mul(ad.matmul(tn, ad.transpose(an)), 1.0 / temperature)
    eye = Tensor(np.eye(n, dtype=z_t.data.dtype))
    diag_t2a = ad.sum_all(ad.mul(ad.log_softmax(logits), eye))
    diag_a2t = ad.sum_all(ad.mul(ad.log_softmax(ad.transpose(logits)), eye))
    return ad.mul(ad.add(diag_t2a, diag_a2t), -1.0 / (2 * n))
