"""Phoneme tokenization and forced-alignment parsing.

Text is tokenized at the phoneme level through a word lexicon (ARPAbet
labels with stress digits).  Ground-truth durations come from alignment
files: plain TSV rows ``label<TAB>start_sec<TAB>end_sec``, one interval
per phoneme, silences included as their own intervals.

Durations are quantized to mel frames as round(end*fps) - round(start*fps)
with round-half-up, then the final nonzero entry absorbs any rounding
drift so the vector sums to the utterance's exact mel frame count.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

PAD_LABEL = "<pad>"
SILENCE_LABEL = "<sil>"
# Labels alignment tools commonly emit for pauses; all map to SILENCE_LABEL.
SILENCE_ALIASES = {"", "sil", "sp", "spn", "<sil>"}

# Reconciliation refuses when the quantized sum strays more than this
# fraction from the target frame count (alignment/audio mismatch).
MAX_DRIFT_FRACTION = 0.05


class LexiconError(KeyError):
    """A word cannot be resolved through the lexicon."""


@dataclass(frozen=True)
class PhonemeVocab:
    labels: tuple[str, ...]
    version: str

    @property
    def size(self) -> int:
        return len(self.labels)

    def id_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary {self.version}") from None

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {label: i for i, label in enumerate(self.labels)}
        )

    @property
    def pad_id(self) -> int:
        return self.id_of(PAD_LABEL)

    @property
    def silence_id(self) -> int:
        return self.id_of(SILENCE_LABEL)


@dataclass
class PhonemeSequence:
    ids: np.ndarray  # 1-D int64
    vocab_version: str

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass
class AlignmentRecord:
    entries: list[tuple[str, float, float]]  # (label, start_sec, end_sec)


def load_vocab(path=None) -> PhonemeVocab:
    """Load the phoneme vocabulary (the packaged list unless a path is given)."""
    if path is None:
        text = resources.files("taem.data").joinpath("phonemes.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    version = "unversioned"
    labels: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            if "vocab_version:" in line:
                version = line.split("vocab_version:", 1)[1].strip()
            continue
        if line:
            labels.append(line)
    return PhonemeVocab(labels=tuple(labels), version=version)


def load_lexicon(path) -> dict[str, list[str]]:
    """Word -> phoneme labels, from `word<whitespace>label label ...` lines."""
    lexicon: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: lexicon row needs a word and phonemes")
        lexicon[parts[0].upper()] = parts[1:]
    return lexicon


def normalize_silence(label: str) -> str:
    return SILENCE_LABEL if label.lower() in SILENCE_ALIASES else label


def tokenize(
    text: str,
    lexicon: dict[str, list[str]],
    vocab: PhonemeVocab,
    alignment: AlignmentRecord | None = None,
) -> PhonemeSequence:
    """Convert text to phoneme ids via the lexicon.

    Words are matched case-insensitively with edge punctuation stripped;
    an out-of-lexicon word is an error (no fallback).  When an alignment
    record is supplied, its silence intervals are inserted as explicit
    silence tokens at the matching positions and the remaining labels are
    cross-checked against the lexicon expansion.
    """
    words = [w.strip(".,;:!?\"'") for w in text.split()]
    words = [w for w in words if w]
    if not words:
        raise ValueError("tokenize: empty text")
    labels: list[str] = []
    missing = [w for w in words if w.upper() not in lexicon]
    if missing:
        raise LexiconError(f"words not in lexicon: {', '.join(sorted(set(missing)))}")
    for w in words:
        labels.extend(lexicon[w.upper()])

    if alignment is not None:
        merged: list[str] = []
        it = iter(labels)
        for entry_label, _, _ in alignment.entries:
            entry_label = normalize_silence(entry_label)
            if entry_label == SILENCE_LABEL:
                merged.append(SILENCE_LABEL)
                continue
            expected = next(it, None)
            if expected is None or expected != entry_label:
                raise ValueError(
                    f"alignment label {entry_label!r} does not match lexicon "
                    f"expansion (expected {expected!r})"
                )
            merged.append(entry_label)
        leftover = list(it)
        if leftover:
            raise ValueError(
                f"alignment is missing {len(leftover)} trailing phonemes "
                f"(next expected {leftover[0]!r})"
            )
        labels = merged

    ids = np.array([vocab.id_of(lb) for lb in labels], dtype=np.int64)
    return PhonemeSequence(ids=ids, vocab_version=vocab.version)


def parse_alignment(path) -> AlignmentRecord:
    """Parse a TSV alignment file (label, start_sec, end_sec per row)."""
    entries: list[tuple[str, float, float]] = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected label<TAB>start<TAB>end")
        label, start_s, end_s = parts
        try:
            start, end = float(start_s), float(end_s)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric interval bounds") from None
        entries.append((label, start, end))
    rec = AlignmentRecord(entries=entries)
    validate_alignment(rec)
    return rec


def validate_alignment(rec: AlignmentRecord) -> None:
    prev_end = None
    for label, start, end in rec.entries:
        if not (start < end):
            raise ValueError(f"alignment entry {label!r}: start {start} >= end {end}")
        if prev_end is not None and start < prev_end - 1e-9:
            raise ValueError(
                f"alignment entry {label!r} at {start} overlaps previous end {prev_end}"
            )
        prev_end = end


def phonemes_from_alignment(rec: AlignmentRecord, vocab: PhonemeVocab) -> PhonemeSequence:
    """Phoneme ids straight from alignment labels (the training-time path)."""
    ids = np.array(
        [vocab.id_of(normalize_silence(label)) for label, _, _ in rec.entries],
        dtype=np.int64,
    )
    if ids.size == 0:
        raise ValueError("alignment record has no entries")
    return PhonemeSequence(ids=ids, vocab_version=vocab.version)


def _round_frames(x: float) -> int:
    """Round-half-up; ties like 2.5 always go to 3 regardless of parity."""
    return int(np.floor(x + 0.5))


def durations_from_alignment(
    rec: AlignmentRecord, mel_fps: int, l_a: int
) -> np.ndarray:
    """Per-phoneme durations in mel frames, reconciled to sum exactly l_a.

    duration_i = round(end_i*fps) - round(start_i*fps); rounding drift is
    absorbed by the final nonzero entry.  A pre-reconciliation mismatch
    above 5% of l_a means the alignment does not belong to this audio.
    """
    if not rec.entries:
        raise ValueError("alignment record has no entries")
    durations = np.array(
        [
            _round_frames(end * mel_fps) - _round_frames(start * mel_fps)
            for _, start, end in rec.entries
        ],
        dtype=np.int64,
    )
    if (durations < 0).any():
        raise ValueError("negative phoneme duration after frame quantization")
    total = int(durations.sum())
    drift = total - l_a
    if abs(drift) > MAX_DRIFT_FRACTION * l_a:
        raise ValueError(
            f"alignment spans {total} frames but audio has {l_a} "
            f"(drift {drift} exceeds {MAX_DRIFT_FRACTION:.0%} of l_a)"
        )
    if drift != 0:
        nonzero = np.flatnonzero(durations)
        if nonzero.size == 0:
            raise ValueError("cannot reconcile an all-zero duration vector")
        last = nonzero[-1]
        if durations[last] - drift < 0:
            raise ValueError(
                f"reconciliation would make entry {last} negative "
                f"(value {durations[last]}, drift {drift})"
            )
        durations[last] -= drift
    return durations
