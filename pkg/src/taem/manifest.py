"""Dataset manifests: one JSON record per line.

Fields per record: ``id`` (unique), one of ``mel_path``/``wav_path``,
``align_path``, one of ``speaker_path``/``speaker_stub_id``, and optional
``target_path``, ``frames_dir``, ``landmarks_path``.  Relative paths are
resolved against the manifest's directory; referenced files must exist
when the manifest is loaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

_PATH_FIELDS = ("mel_path", "wav_path", "align_path", "speaker_path",
                "target_path", "landmarks_path")
_KNOWN_FIELDS = set(_PATH_FIELDS) | {"id", "speaker_stub_id", "frames_dir",
                                     "durations_path", "phonemes_path"}


@dataclass
class ManifestRecord:
    id: str
    mel_path: Path | None = None
    wav_path: Path | None = None
    align_path: Path | None = None
    speaker_path: Path | None = None
    speaker_stub_id: int | None = None
    target_path: Path | None = None
    frames_dir: Path | None = None
    landmarks_path: Path | None = None
    durations_path: Path | None = None
    phonemes_path: Path | None = None
    extra: dict = field(default_factory=dict)


def load_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    base = Path(path).parent
    records: list[ManifestRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{lineno}: invalid JSON: {e}") from None
        unknown = set(raw) - _KNOWN_FIELDS
        if unknown:
            raise ValueError(f"{path}:{lineno}: unknown manifest fields {sorted(unknown)}")
        if "id" not in raw:
            raise ValueError(f"{path}:{lineno}: record has no id")
        rid = str(raw["id"])
        if rid in seen_ids:
            raise ValueError(f"{path}:{lineno}: duplicate id {rid!r}")
        seen_ids.add(rid)
        if "mel_path" not in raw and "wav_path" not in raw:
            raise ValueError(f"{path}:{lineno}: record {rid!r} has neither mel_path nor wav_path")
        rec = ManifestRecord(id=rid)
        for key in ("durations_path", "phonemes_path", *(_PATH_FIELDS)):
            if key in raw and raw[key] is not None:
                p = base / raw[key]
                if check_files and not p.exists():
                    raise FileNotFoundError(
                        f"{path}:{lineno}: record {rid!r}: {key} {p} does not exist"
                    )
                setattr(rec, key, p)
        if "frames_dir" in raw and raw["frames_dir"] is not None:
            p = base / raw["frames_dir"]
            if check_files and not p.is_dir():
                raise FileNotFoundError(
                    f"{path}:{lineno}: record {rid!r}: frames_dir {p} does not exist"
                )
            rec.frames_dir = p
        if "speaker_stub_id" in raw and raw["speaker_stub_id"] is not None:
            rec.speaker_stub_id = int(raw["speaker_stub_id"])
        records.append(rec)
    return records


def write_manifest(path, rows: list[dict]) -> None:
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
