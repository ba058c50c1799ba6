"""Data preparation: raw corpus -> training-ready features.

Per manifest record this computes the log-mel spectrogram (trimmed to a
multiple of 4 frames so one target row covers exactly 4 mel frames),
reconciles alignment durations against the trimmed frame count, extracts
the phoneme label sequence from the alignment, evaluates the oracle
target encoder, and materializes the speaker embedding (stub identities
become real blob files here).  The output manifest points at the
prepared artifacts and carries any frames/landmarks references through
for evaluation.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .blob import write_blobs
from .dsp import MelConfig, mel_spectrogram, read_wav
from .losses import OracleEncoderSpec, oracle_targets
from .manifest import ManifestRecord, write_manifest
from .speaker import save_speaker_embedding, stub_embedding
from .textalign import (
    PhonemeVocab,
    normalize_silence,
    durations_from_alignment,
    parse_alignment,
)


class PrepareError(RuntimeError):
    pass


def prepare_record(
    rec: ManifestRecord,
    out_dir: Path,
    mel_cfg: MelConfig,
    oracle: OracleEncoderSpec,
    vocab: PhonemeVocab,
    stub_seed: int,
) -> dict:
    """Prepare one record; stub speakers are drawn at the oracle's width."""
    if rec.wav_path is None:
        raise PrepareError(f"{rec.id}: prepare needs wav_path")
    if rec.align_path is None:
        raise PrepareError(f"{rec.id}: prepare needs align_path")
    mel = mel_spectrogram(read_wav(rec.wav_path), mel_cfg)
    l_a = mel.frames.shape[0] - (mel.frames.shape[0] % 4)
    if l_a < 4:
        raise PrepareError(f"{rec.id}: only {mel.frames.shape[0]} mel frames")
    frames = mel.frames[:l_a]

    alignment = parse_alignment(rec.align_path)
    durations = durations_from_alignment(alignment, mel_cfg.fps, l_a)
    labels = [normalize_silence(label) for label, _, _ in alignment.entries]
    for lb in labels:
        vocab.id_of(lb)  # unknown labels fail here, before anything is written

    targets = oracle_targets(frames, oracle)

    write_blobs(out_dir / f"{rec.id}.mel.blob", {"mel": frames})
    write_blobs(out_dir / f"{rec.id}.targets.blob", {"targets": targets})
    (out_dir / f"{rec.id}.durations.txt").write_text(
        "\n".join(str(int(d)) for d in durations) + "\n", "utf-8"
    )
    (out_dir / f"{rec.id}.phonemes.txt").write_text("\n".join(labels) + "\n", "utf-8")

    if rec.speaker_path is not None:
        speaker_rel = str(Path(rec.speaker_path).resolve())
    elif rec.speaker_stub_id is not None:
        spk = stub_embedding(rec.speaker_stub_id, stub_seed, dim=oracle.out_dim)
        save_speaker_embedding(out_dir / f"{rec.id}.speaker.blob", spk)
        speaker_rel = f"{rec.id}.speaker.blob"
    else:
        raise PrepareError(f"{rec.id}: record has neither speaker_path nor speaker_stub_id")

    row = {
        "id": rec.id,
        "mel_path": f"{rec.id}.mel.blob",
        "target_path": f"{rec.id}.targets.blob",
        "durations_path": f"{rec.id}.durations.txt",
        "phonemes_path": f"{rec.id}.phonemes.txt",
        "speaker_path": speaker_rel,
    }
    if rec.frames_dir is not None:
        row["frames_dir"] = str(Path(rec.frames_dir).resolve())
    if rec.landmarks_path is not None:
        row["landmarks_path"] = str(Path(rec.landmarks_path).resolve())
    return row


def prepare_corpus(
    records: list[ManifestRecord],
    out_dir,
    mel_cfg: MelConfig,
    oracle: OracleEncoderSpec,
    vocab: PhonemeVocab,
    stub_seed: int,
) -> tuple[Path, int]:
    """Prepare every record; returns (output manifest path, failure count)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for rec in sorted(records, key=lambda r: r.id):
        try:
            rows.append(prepare_record(rec, out, mel_cfg, oracle, vocab, stub_seed))
        except Exception as e:  # report all failures, prepare the rest
            print(f"prepare: {rec.id} failed: {e}", file=sys.stderr)
            failures += 1
    manifest_path = out / "manifest.jsonl"
    write_manifest(manifest_path, rows)
    return manifest_path, failures
