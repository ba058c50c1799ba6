import numpy as np
import pytest

from taem.dsp import (
    MelConfig,
    Waveform,
    downmix_integer,
    frame_count,
    frames_per_video_frame,
    hann_window,
    mel_filterbank,
    mel_spectrogram,
    read_wav,
    write_wav,
)


@pytest.fixture
def cfg():
    return MelConfig()


def naive_frame_logmel(samples, frame_index, cfg):
    """Reference path: explicit DFT sum, no FFT, shared only the window math."""
    start = frame_index * cfg.hop
    frame = samples[start : start + cfg.window] * hann_window(cfg.window)
    n = cfg.n_fft
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    power = np.abs(basis @ frame) ** 2
    weights, _ = mel_filterbank(cfg)
    return np.log(np.maximum(weights @ power, cfg.log_floor))


def test_one_second_gives_96_frames(cfg):
    # 1 + (16000 - 800) // 160
    assert frame_count(16000, cfg) == 96
    wav = Waveform(np.zeros(16000), 16000)
    assert mel_spectrogram(wav, cfg).frames.shape == (96, 80)


def test_silence_hits_log_floor(cfg):
    mel = mel_spectrogram(Waveform(np.zeros(16000), 16000), cfg)
    np.testing.assert_allclose(mel.frames, -5.0, atol=1e-6)


def test_sine_440_matches_reference_dft_and_nearest_center(cfg):
    t = np.arange(16000) / 16000
    samples = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    mel = mel_spectrogram(Waveform(samples, 16000), cfg)
    for frame_index in (0, 40, 95):
        ref = naive_frame_logmel(samples, frame_index, cfg)
        np.testing.assert_allclose(mel.frames[frame_index], ref, atol=1e-5)
    argmax = mel.frames.argmax(axis=1)
    assert len(np.unique(argmax)) == 1
    _, centers = mel_filterbank(cfg)
    assert argmax[0] == int(np.argmin(np.abs(centers - 440.0)))


def test_hop_shift_moves_frames_by_one(cfg):
    rng = np.random.default_rng(0)
    samples = rng.uniform(-0.8, 0.8, 16000)
    shifted = np.concatenate([rng.uniform(-0.8, 0.8, cfg.hop), samples])
    a = mel_spectrogram(Waveform(samples, 16000), cfg).frames
    b = mel_spectrogram(Waveform(shifted, 16000), cfg).frames
    assert b.shape[0] == a.shape[0] + 1
    np.testing.assert_array_equal(b[1:], a)  # bit-compare


def test_energy_monotone_under_scaling(cfg):
    rng = np.random.default_rng(1)
    samples = rng.uniform(-0.4, 0.4, 8000)
    lo = mel_spectrogram(Waveform(samples, 16000), cfg).frames
    hi = mel_spectrogram(Waveform(2.0 * samples, 16000), cfg).frames
    assert (hi >= lo - 1e-6).all()


def test_wrong_sample_rate_rejected(cfg):
    with pytest.raises(ValueError, match="16000"):
        mel_spectrogram(Waveform(np.zeros(44100), 44100), cfg)


def test_too_short_audio_rejected(cfg):
    with pytest.raises(ValueError, match="window"):
        mel_spectrogram(Waveform(np.zeros(799), 16000), cfg)


class TestFramesPerVideoFrame:
    def test_paper_rates(self):
        assert frames_per_video_frame(25, 100) == 4

    def test_equal_rates(self):
        assert frames_per_video_frame(100, 100) == 1

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            frames_per_video_frame(30, 100)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    samples = np.round(rng.uniform(-0.9, 0.9, 4000) * 32767) / 32767
    path = tmp_path / "x.wav"
    write_wav(path, Waveform(samples, 16000))
    back = read_wav(path)
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, samples, atol=1.0 / 32767)


def test_downmix_integer_factor():
    rng = np.random.default_rng(3)
    wav = Waveform(rng.uniform(-0.5, 0.5, 48000), 48000)
    out = downmix_integer(wav, 16000)
    assert out.sample_rate == 16000
    assert out.samples.shape == (16000,)
    with pytest.raises(ValueError):
        downmix_integer(Waveform(np.zeros(44100), 44100), 16000)
