"""Visual-quality and lip-sync metrics: PSNR, SSIM, and landmark distance.

PSNR uses the 8-bit peak (255) and is capped at 100 dB for identical
inputs.  SSIM is the canonical single-scale form: 11x11 Gaussian window
with sigma 1.5, K1=0.01, K2=0.03, L=255, population-weighted moments,
averaged over valid window positions only; color inputs are converted to
luma with ITU-R 601 weights first.  LMD subtracts each frame's lip
centroid from both landmark sets (translation-only normalization) and
averages Euclidean distances over points and frames.

Sync-confidence metrics that need a pretrained scorer are reported as
"n/a" in the evaluation table rather than silently omitted.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

_ITUR601 = np.array([0.299, 0.587, 0.114])


def _to_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            return arr[:, :, 0]
        if arr.shape[2] == 3:
            return arr @ _ITUR601
        raise ValueError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    if arr.ndim == 2:
        return arr
    raise ValueError(f"expected a 2-D or 3-D image, got shape {arr.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return 100.0
    return float(10.0 * np.log10(255.0**2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5) -> float:
    """Structural similarity in [-1, 1]; 1.0 iff the images are identical."""
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if min(x.shape) < window_size:
        raise ValueError(
            f"ssim: image {x.shape} smaller than the {window_size}x{window_size} window"
        )
    w = _gaussian_window(window_size, sigma)
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    xx = convolve2d(x * x, w, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, w, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def lmd(gen: list[np.ndarray], gt: list[np.ndarray]) -> float:
    """Mean lip-landmark distance in pixels after per-frame centroid removal."""
    if len(gen) != len(gt):
        raise ValueError(f"lmd: {len(gen)} generated frames vs {len(gt)} ground truth")
    if not gen:
        raise ValueError("lmd: empty landmark sequences")
    total = 0.0
    count = 0
    for i, (g, t) in enumerate(zip(gen, gt)):
        g = np.asarray(g, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if g.shape != t.shape or g.ndim != 2 or g.shape[1] != 2:
            raise ValueError(
                f"lmd: frame {i} point sets {g.shape} and {t.shape} do not match"
            )
        g = g - g.mean(axis=0)
        t = t - t.mean(axis=0)
        total += float(np.linalg.norm(g - t, axis=1).sum())
        count += g.shape[0]
    return total / count


def load_landmarks(path) -> list[np.ndarray]:
    """Parse `frame<TAB>idx<TAB>x<TAB>y` rows into per-frame (P, 2) arrays."""
    frames: dict[int, dict[int, tuple[float, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected frame<TAB>idx<TAB>x<TAB>y")
        fr, idx = int(parts[0]), int(parts[1])
        x, y = float(parts[2]), float(parts[3])
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ValueError(f"{path}:{lineno}: non-finite coordinate")
        frames.setdefault(fr, {})[idx] = (x, y)
    if not frames:
        raise ValueError(f"{path}: no landmark rows")
    out = []
    counts = {len(pts) for pts in frames.values()}
    if len(counts) != 1:
        raise ValueError(f"{path}: point count varies across frames: {sorted(counts)}")
    for fr in sorted(frames):
        pts = frames[fr]
        out.append(np.array([pts[i] for i in sorted(pts)], dtype=np.float64))
    return out


def load_frame(path) -> np.ndarray:
    """Load a frame image: PNG (via Pillow) or a uint8 .npy array."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.dtype != np.uint8:
            raise ValueError(f"{path}: raw frame must be uint8, got {arr.dtype}")
        return arr
    return np.asarray(Image.open(path))


def _frame_files(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".png", ".npy")
    )


def evaluate_utterance(
    gen_frames_dir: Path,
    gt_frames_dir: Path,
    gen_landmarks: Path | None,
    gt_landmarks: Path | None,
) -> dict[str, float | None]:
    gen_files = _frame_files(gen_frames_dir)
    gt_files = _frame_files(gt_frames_dir)
    if len(gen_files) != len(gt_files) or not gen_files:
        raise ValueError(
            f"frame count mismatch: {len(gen_files)} generated vs {len(gt_files)} ground truth"
        )
    psnr_vals, ssim_vals = [], []
    for gf, tf in zip(gen_files, gt_files):
        a, b = load_frame(gf), load_frame(tf)
        psnr_vals.append(psnr(a, b))
        ssim_vals.append(ssim(a, b))
    result: dict[str, float | None] = {
        "psnr": float(np.mean(psnr_vals)),
        "ssim": float(np.mean(ssim_vals)),
        "lmd": None,
    }
    if gen_landmarks is not None and gt_landmarks is not None:
        result["lmd"] = lmd(load_landmarks(gen_landmarks), load_landmarks(gt_landmarks))
    return result


def eval_report(records, outputs_dir, report_path) -> int:
    """Write the per-utterance metric table plus a means row.

    ``records`` supply the ground truth (frames_dir / landmarks_path);
    generated material is looked up under outputs_dir/<id>/.  Missing or
    broken records are reported on stderr and skipped; the return value
    is the number of failures (nonzero exit for the CLI).
    """
    outputs_dir = Path(outputs_dir)
    rows = []
    failures = 0
    for rec in sorted(records, key=lambda r: r.id):
        try:
            if rec.frames_dir is None:
                raise ValueError("record has no frames_dir")
            gen_dir = outputs_dir / rec.id / "frames"
            if not gen_dir.is_dir():
                raise FileNotFoundError(f"no generated frames at {gen_dir}")
            gen_lm = outputs_dir / rec.id / "landmarks.tsv"
            metrics = evaluate_utterance(
                gen_dir,
                rec.frames_dir,
                gen_lm if gen_lm.exists() else None,
                rec.landmarks_path,
            )
        except (OSError, ValueError) as e:
            print(f"eval: skipping {rec.id}: {e}", file=sys.stderr)
            failures += 1
            continue
        rows.append((rec.id, metrics["psnr"], metrics["ssim"], metrics["lmd"]))

    def fmt(v):
        return "n/a" if v is None else f"{v:.6f}"

    with open(report_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utterance_id", "psnr", "ssim", "lmd", "lse_c", "lse_d"])
        for rid, p, s, d in rows:
            writer.writerow([rid, fmt(p), fmt(s), fmt(d), "n/a", "n/a"])
        if rows:
            lmds = [d for _, _, _, d in rows if d is not None]
            writer.writerow(
                [
                    "mean",
                    fmt(float(np.mean([p for _, p, _, _ in rows]))),
                    fmt(float(np.mean([s for _, _, s, _ in rows]))),
                    fmt(float(np.mean(lmds)) if lmds else None),
                    "n/a",
                    "n/a",
                ]
            )
    if failures:
        print(
            f"eval: {failures} record(s) failed; see warnings above", file=sys.stderr
        )
    return failures
