"""Waveform to log-mel spectrogram conversion at 100 frames per second.

Framing contract: frame t covers samples [t*hop, t*hop + window) with no
centering or padding, so an utterance of n samples yields exactly
``1 + (n - window) // hop`` frames.  At 16 kHz with hop 160 / window 800
that is 100 fps, four mel frames per 25 fps video frame.

Filterbank and compression choices the framing alone does not fix:

* periodic Hann window, FFT size equal to the window (no zero padding),
* power spectrum |X|^2,
* 80 triangular mel filters between 55 Hz and 7600 Hz, unit peak
  (no area normalization), corners spaced on the HTK mel scale
  2595*log10(1 + f/700), ramps linear in Hz,
* natural-log compression floored at exp(-5), so silence maps to -5.0.

All of these are configurable through MelConfig.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly


@dataclass
class Waveform:
    samples: np.ndarray  # float64/float32 in [-1, 1]
    sample_rate: int


@dataclass
class MelConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    hop: int = 160
    window: int = 800
    n_fft: int = 800
    fmin: float = 55.0
    fmax: float = 7600.0
    log_floor: float = field(default_factory=lambda: float(np.exp(-5.0)))

    @property
    def fps(self) -> int:
        if self.sample_rate % self.hop != 0:
            raise ValueError(
                f"hop {self.hop} does not divide sample rate {self.sample_rate}"
            )
        return self.sample_rate // self.hop


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (l_a, n_mels) log-mel
    fps: int
    n_mels: int


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono RIFF WAV into floats in [-1, 1]."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, wav: Waveform) -> None:
    data = np.clip(np.round(wav.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wav.sample_rate)
        f.writeframes(data.tobytes())


def downmix_integer(wav: Waveform, target_rate: int) -> Waveform:
    """Integer-factor downsample (e.g. 48 kHz -> 16 kHz) with a FIR anti-alias filter."""
    if wav.sample_rate % target_rate != 0:
        raise ValueError(
            f"downmix: {wav.sample_rate} Hz is not an integer multiple of {target_rate} Hz"
        )
    factor = wav.sample_rate // target_rate
    if factor == 1:
        return wav
    out = resample_poly(wav.samples, 1, factor)
    return Waveform(samples=out, sample_rate=target_rate)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, 0.5*(1 - cos(2*pi*k/n))."""
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filterbank and its center frequencies.

    Returns (weights, centers): weights is (n_mels, n_fft//2 + 1), each
    filter ramping 0->1->0 linearly in Hz between mel-spaced corner
    frequencies; centers is the per-filter peak frequency in Hz.
    """
    n_bins = config.n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * (config.sample_rate / config.n_fft)
    corners = mel_to_hz(
        np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    )
    weights = np.zeros((config.n_mels, n_bins))
    for i in range(config.n_mels):
        lo, center, hi = corners[i], corners[i + 1], corners[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
    return weights, corners[1:-1]


def frame_count(n_samples: int, config: MelConfig) -> int:
    if n_samples < config.window:
        raise ValueError(
            f"audio of {n_samples} samples is shorter than one window ({config.window})"
        )
    return 1 + (n_samples - config.window) // config.hop


def mel_spectrogram(wav: Waveform, config: MelConfig | None = None) -> MelSpectrogram:
    """Log-mel spectrogram under the framing contract in the module docstring."""
    config = config or MelConfig()
    if wav.sample_rate != config.sample_rate:
        raise ValueError(
            f"expected {config.sample_rate} Hz audio, got {wav.sample_rate} Hz"
        )
    samples = np.asarray(wav.samples, dtype=np.float64)
    l_a = frame_count(samples.size, config)
    window = hann_window(config.window)
    frames = np.lib.stride_tricks.sliding_window_view(samples, config.window)[
        :: config.hop
    ][:l_a]
    spectra = np.abs(np.fft.rfft(frames * window, n=config.n_fft, axis=1)) ** 2
    weights, _ = mel_filterbank(config)
    mel = spectra @ weights.T
    logmel = np.log(np.maximum(mel, config.log_floor))
    if not np.isfinite(logmel).all():
        raise ArithmeticError("mel_spectrogram produced non-finite values")
    return MelSpectrogram(
        frames=logmel.astype(np.float32), fps=config.fps, n_mels=config.n_mels
    )


def frames_per_video_frame(video_fps: int, mel_fps: int) -> int:
    """Mel frames consumed per video frame (4 for 100 fps mel / 25 fps video)."""
    if video_fps <= 0 or mel_fps <= 0:
        raise ValueError("frame rates must be positive")
    if mel_fps % video_fps != 0:
        raise ValueError(
            f"mel fps {mel_fps} is not divisible by video fps {video_fps}"
        )
    return mel_fps // video_fps
