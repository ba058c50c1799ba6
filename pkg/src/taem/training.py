"""Distillation training loop.

Determinism is a contract here: batch composition and dropout masks are
derived from (seed, step) alone, never from ambient RNG state, so a run
resumed from a checkpoint at step k replays steps k+1..N bit-identically
to an uninterrupted run.  Gradients accumulate over the batch in a fixed
order for the same reason.

Length regulation is always teacher-forced with the reconciled alignment
durations during training; predicted durations feed only the duration
loss.  A non-finite loss aborts the run and leaves the last successfully
written checkpoint in place.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .blob import read_blobs
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .losses import loss_contrastive, loss_dis, loss_dur
from .manifest import ManifestRecord
from .network import TaemParams, taem_forward
from .optim import AdamW
from .speaker import load_speaker_embedding
from .textalign import PhonemeSequence, PhonemeVocab

# Fixed labels keeping the per-purpose RNG streams disjoint.
_ORDER_STREAM = 271828
_DROPOUT_STREAM = 314159


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the last good checkpoint is retained."""


@dataclass
class PreparedExample:
    id: str
    ids: np.ndarray          # (l_t,) int64 phoneme ids
    durations: np.ndarray    # (l_t,) int64, sum divisible by 4
    targets: np.ndarray      # (l_v, width) float32
    speaker: np.ndarray      # (width,) float32
    vocab_version: str

    @property
    def sequence(self) -> PhonemeSequence:
        return PhonemeSequence(ids=self.ids, vocab_version=self.vocab_version)


def load_prepared(records: list[ManifestRecord], vocab: PhonemeVocab) -> list[PreparedExample]:
    """Materialize training examples from a prepared manifest."""
    examples = []
    for rec in records:
        if rec.phonemes_path is None or rec.durations_path is None:
            raise ValueError(f"record {rec.id!r}: not prepared (missing phonemes/durations)")
        if rec.target_path is None or rec.speaker_path is None:
            raise ValueError(f"record {rec.id!r}: not prepared (missing targets/speaker)")
        labels = [
            ln.strip()
            for ln in Path(rec.phonemes_path).read_text("utf-8").splitlines()
            if ln.strip()
        ]
        ids = np.array([vocab.id_of(lb) for lb in labels], dtype=np.int64)
        durations = np.array(
            [
                int(ln)
                for ln in Path(rec.durations_path).read_text("utf-8").splitlines()
                if ln.strip()
            ],
            dtype=np.int64,
        )
        if ids.size != durations.size:
            raise ValueError(
                f"record {rec.id!r}: {ids.size} phonemes vs {durations.size} durations"
            )
        targets = read_blobs(rec.target_path)["targets"].astype(np.float32)
        if int(durations.sum()) != 4 * targets.shape[0]:
            raise ValueError(
                f"record {rec.id!r}: durations sum {int(durations.sum())} != "
                f"4 * {targets.shape[0]} target frames"
            )
        speaker = load_speaker_embedding(rec.speaker_path, dim=targets.shape[1])
        examples.append(
            PreparedExample(
                id=rec.id,
                ids=ids,
                durations=durations,
                targets=targets,
                speaker=speaker,
                vocab_version=vocab.version,
            )
        )
    return examples


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _ORDER_STREAM, epoch]))
    )
    return rng.permutation(n)


def batch_indices(seed: int, step: int, batch_size: int, n: int) -> np.ndarray:
    """Example indices for a 1-based step: a resumable shuffled cycle."""
    start = (step - 1) * batch_size
    out = np.empty(batch_size, dtype=np.int64)
    perm_epoch = -1
    perm = None
    for j in range(batch_size):
        epoch, offset = divmod(start + j, n)
        if epoch != perm_epoch:
            perm = _epoch_permutation(seed, epoch, n)
            perm_epoch = epoch
        out[j] = perm[offset]
    return out


def _dropout_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _DROPOUT_STREAM, step]))
    )


def _mean(parts: list[Tensor]) -> Tensor:
    return ad.mul(reduce(ad.add, parts), 1.0 / len(parts))


def train_step(
    examples: list[PreparedExample],
    params: TaemParams,
    optimizer: AdamW,
    cfg: TrainConfig,
    step: int,
) -> tuple[float, float, float]:
    """One optimizer step; returns (loss_dis, loss_dur, loss_total) values."""
    idxs = batch_indices(cfg.seed, step, cfg.batch_size, len(examples))
    rng = _dropout_rng(cfg.seed, step) if params.config.dropout > 0 else None
    dis_parts: list[Tensor] = []
    dur_parts: list[Tensor] = []
    zts: list[Tensor] = []
    targets: list[np.ndarray] = []
    for i in idxs:
        ex = examples[int(i)]
        z_t, pred = taem_forward(
            ex.sequence, ex.speaker, params, durations=ex.durations, rng=rng
        )
        dur_parts.append(loss_dur(pred, ex.durations))
        if "mse" in cfg.loss_mode:
            dis_parts.append(loss_dis(z_t, ex.targets))
        if "contrastive" in cfg.loss_mode:
            zts.append(z_t)
            targets.append(ex.targets)

    terms: list[Tensor] = []
    if dis_parts:
        terms.append(_mean(dis_parts))
    if zts:
        z_all = zts[0] if len(zts) == 1 else ad.concat(zts, axis=0)
        terms.append(loss_contrastive(z_all, np.concatenate(targets), cfg.temperature))
    dis_term = reduce(ad.add, terms)
    dur_term = _mean(dur_parts)
    total = ad.add(ad.mul(dis_term, cfg.dis_weight), ad.mul(dur_term, cfg.dur_weight))
    if not np.isfinite(total.data):
        raise NonFiniteError("training loss is non-finite")
    params.zero_grad()
    total.backward()
    optimizer.step()
    return float(dis_term.data), float(dur_term.data), float(total.data)


def train(
    examples: list[PreparedExample],
    params: TaemParams,
    cfg: TrainConfig,
    checkpoint_path,
    log_path,
    optimizer: AdamW | None = None,
    start_step: int = 0,
    master_seed: int | None = None,
    log_stderr_every: int = 100,
) -> list[tuple[int, float, float, float]]:
    """Run steps start_step+1 .. max_steps; returns the logged history.

    The metrics log is CSV `step,loss_dis,loss_dur,loss_total,wall_ms`,
    appended to when resuming.  Checkpoints are written atomically every
    ``checkpoint_every`` steps and at the end; a diverged run keeps the
    previous checkpoint file.
    """
    if not examples:
        raise ValueError("train: empty example list")
    if master_seed is None:
        master_seed = cfg.seed
    optimizer = optimizer or AdamW(
        params.tensors,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    log_path = Path(log_path)
    new_log = not (log_path.exists() and start_step > 0)
    log = open(log_path, "w" if new_log else "a", newline="")
    if new_log:
        log.write("step,loss_dis,loss_dur,loss_total,wall_ms\n")
    history: list[tuple[int, float, float, float]] = []
    try:
        for step in range(start_step + 1, cfg.max_steps + 1):
            t0 = time.monotonic()
            try:
                dis, dur, total = train_step(examples, params, optimizer, cfg, step)
            except NonFiniteError as e:
                log.flush()
                raise TrainingDiverged(
                    f"step {step}: {e}; last checkpoint retained"
                ) from e
            wall_ms = (time.monotonic() - t0) * 1000.0
            log.write(f"{step},{dis:.9e},{dur:.9e},{total:.9e},{wall_ms:.3f}\n")
            history.append((step, dis, dur, total))
            if log_stderr_every and step % log_stderr_every == 0:
                print(
                    f"step {step}: loss_dis={dis:.6f} loss_dur={dur:.6f}",
                    file=sys.stderr,
                )
            if step % cfg.checkpoint_every == 0 or step == cfg.max_steps:
                save_checkpoint(
                    checkpoint_path,
                    params,
                    optimizer,
                    master_seed=master_seed,
                    step=step,
                    train_config=cfg.to_dict(),
                )
    finally:
        log.close()
    return history
