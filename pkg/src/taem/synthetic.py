"""Desk-scale synthetic corpus generation.

Each utterance gets a random phoneme segmentation of a fixed mel-frame
budget, a waveform of per-phoneme sine tones (plus a noise floor so no
frame is silent), the matching alignment TSV, pseudo-word text with a
lexicon that expands back to exactly the non-silence phonemes, a stub
speaker identity, and noise frames/landmarks for exercising the metric
pipeline.  Everything derives from one seed through per-utterance
substreams, so regenerating with the same seed reproduces the corpus
byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .dsp import MelConfig, Waveform, write_wav
from .manifest import write_manifest
from .textalign import SILENCE_LABEL, load_vocab

_UTT_STREAM = 424242


def _utt_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _UTT_STREAM, index]))
    )


def _segment_frames(rng: np.random.Generator, total: int, parts: int) -> np.ndarray:
    """Random composition of ``total`` into ``parts`` positive integers."""
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def make_synthetic(
    out_dir,
    n_utterances: int = 8,
    seed: int = 2024,
    l_a: int = 96,
    mel: MelConfig | None = None,
    n_frames: int = 8,
    n_landmarks: int = 20,
    silence_prob: float = 0.3,
) -> Path:
    """Write a corpus under out_dir and return the manifest path."""
    mel = mel or MelConfig()
    out = Path(out_dir)
    for sub in ("wav", "align", "text", "frames", "landmarks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    vocab = load_vocab()
    # Candidate labels: everything except padding and silence.
    phones = [lb for lb in vocab.labels if not lb.startswith("<")]
    lexicon_rows: list[str] = []
    manifest_rows: list[dict] = []

    for u in range(n_utterances):
        rng = _utt_rng(seed, u)
        uid = f"utt{u:03d}"
        n_words = int(rng.integers(2, 4))
        words = []
        for w in range(n_words):
            n_ph = int(rng.integers(2, 5))
            labels = [phones[int(i)] for i in rng.integers(0, len(phones), n_ph)]
            word = f"w{u}{chr(ord('a') + w)}"
            words.append((word, labels))
            lexicon_rows.append(f"{word} {' '.join(labels)}")
        # Interleave optional silences between words.
        seq: list[str] = []
        for w, (_, labels) in enumerate(words):
            seq.extend(labels)
            if w + 1 < len(words) and rng.random() < silence_prob:
                seq.append(SILENCE_LABEL)
        durations = _segment_frames(rng, l_a, len(seq))

        # Alignment TSV: boundaries in seconds at the mel frame rate.
        bounds = np.concatenate([[0], np.cumsum(durations)]) / mel.fps
        align_lines = [
            f"{label}\t{bounds[i]:.6f}\t{bounds[i + 1]:.6f}"
            for i, label in enumerate(seq)
        ]
        (out / "align" / f"{uid}.tsv").write_text(
            "\n".join(align_lines) + "\n", "utf-8"
        )
        (out / "text" / f"{uid}.txt").write_text(
            " ".join(w for w, _ in words) + "\n", "utf-8"
        )

        # Waveform: one tone per phoneme segment, silence segments quieter.
        n_samples = (l_a - 1) * mel.hop + mel.window
        freq_per_frame = np.empty(l_a)
        amp_per_frame = np.empty(l_a)
        pos = 0
        for label, dur in zip(seq, durations):
            f0 = 180.0 + 37.0 * (vocab.id_of(label) % 32) + float(rng.uniform(-5, 5))
            amp = 0.02 if label == SILENCE_LABEL else 0.3
            freq_per_frame[pos : pos + dur] = f0
            amp_per_frame[pos : pos + dur] = amp
            pos += dur
        freq = np.repeat(freq_per_frame, mel.hop)
        amp = np.repeat(amp_per_frame, mel.hop)
        freq = np.concatenate([freq, np.full(n_samples - freq.size, freq[-1])])
        amp = np.concatenate([amp, np.full(n_samples - amp.size, amp[-1])])
        phase = 2.0 * np.pi * np.cumsum(freq) / mel.sample_rate
        samples = amp * np.sin(phase) + 0.005 * rng.standard_normal(n_samples)
        write_wav(out / "wav" / f"{uid}.wav", Waveform(samples, mel.sample_rate))

        # Frames and landmarks so the metric pipeline has ground truth.
        frames_dir = out / "frames" / uid
        frames_dir.mkdir(exist_ok=True)
        for k in range(n_frames):
            img = rng.integers(0, 256, size=(96, 96, 3), dtype=np.uint8)
            Image.fromarray(img, "RGB").save(frames_dir / f"{k:04d}.png")
        lm_lines = []
        for k in range(n_frames):
            angles = np.linspace(0.0, 2.0 * np.pi, n_landmarks, endpoint=False)
            cx, cy = 48.0, 70.0
            rx = 18.0 + float(rng.uniform(-2, 2))
            ry = 8.0 + float(rng.uniform(-2, 2))
            xs = cx + rx * np.cos(angles)
            ys = cy + ry * np.sin(angles)
            for j in range(n_landmarks):
                lm_lines.append(f"{k}\t{j}\t{xs[j]:.3f}\t{ys[j]:.3f}")
        (out / "landmarks" / f"{uid}.tsv").write_text("\n".join(lm_lines) + "\n", "utf-8")

        manifest_rows.append(
            {
                "id": uid,
                "wav_path": f"wav/{uid}.wav",
                "align_path": f"align/{uid}.tsv",
                "speaker_stub_id": u,
                "frames_dir": f"frames/{uid}",
                "landmarks_path": f"landmarks/{uid}.tsv",
            }
        )

    (out / "lexicon.txt").write_text("\n".join(lexicon_rows) + "\n", "utf-8")
    manifest_path = out / "manifest.jsonl"
    write_manifest(manifest_path, manifest_rows)
    return manifest_path
