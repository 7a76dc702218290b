"""STFT analysis/synthesis, mel mapping, and Griffin-Lim phase recovery."""

import numpy as np
import pytest

from specwav import dsp
from specwav.dsp import (ColaError, DspError, MelSpectrogram, StftParams,
                         Waveform, griffin_lim, hann_window, hz_to_mel,
                         istft, log_compress, magnitude, mel_filterbank,
                         mel_spectrogram, mel_to_hz, mel_to_linear, stft)

from oracles import naive_dft

SMALL = StftParams(n_fft=256, hop=64, win_length=256)


@pytest.mark.parametrize("kwargs", [
    {"n_fft": 1000},
    {"n_fft": 0},
    {"hop": 0},
    {"hop": 300, "win_length": 256, "n_fft": 512},
    {"win_length": 2048},
])
def test_stft_params_validation(kwargs):
    with pytest.raises(DspError):
        StftParams(**{"n_fft": 256, "hop": 64, "win_length": 256, **kwargs})


def test_hann_window_is_periodic():
    w = hann_window(8)
    expected = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(8) / 8))
    assert np.allclose(w, expected, atol=1e-15)
    assert w[0] == 0.0 and w[4] == 1.0
    # periodic windows sum to exactly half their length
    assert hann_window(64).sum() == pytest.approx(32.0, abs=1e-12)


def test_hann_window_rejects_bad_length():
    with pytest.raises(DspError):
        hann_window(0)


def test_stft_matches_naive_dft():
    rng = np.random.default_rng(7)
    x = rng.normal(size=48)
    params = StftParams(n_fft=16, hop=8, win_length=16, center=False)
    spec = stft(Waveform(x), params)
    window = hann_window(16)
    assert spec.data.shape == (5, 9)
    for t in range(5):
        frame = x[8 * t:8 * t + 16] * window
        expected = naive_dft(frame)
        assert np.allclose(spec.data[t], expected, atol=1e-9)


def test_stft_center_reflect_pads():
    rng = np.random.default_rng(8)
    x = rng.normal(size=64)
    params = StftParams(n_fft=16, hop=8, win_length=16, center=True)
    spec = stft(Waveform(x), params)
    padded = np.pad(x, 8, mode="reflect")
    frame0 = padded[:16] * hann_window(16)
    assert np.allclose(spec.data[0], naive_dft(frame0), atol=1e-9)
    # frame t is centered on sample t * hop
    assert spec.data.shape[0] == 1 + len(x) // 8


@pytest.mark.parametrize("length", [257, 700, 1000, 2048])
def test_round_trip_exact_at_any_length(length):
    rng = np.random.default_rng(length)
    x = rng.normal(size=length)
    y = istft(stft(Waveform(x), SMALL), length=length)
    err = np.linalg.norm(y.samples - x) / np.linalg.norm(x)
    assert err < 1e-10


def test_round_trip_default_trim():
    rng = np.random.default_rng(3)
    x = rng.normal(size=1000)
    spec = stft(Waveform(x), SMALL)
    y = istft(spec)
    n_frames = spec.data.shape[0]
    assert len(y) == (n_frames - 1) * SMALL.hop
    assert np.allclose(y.samples, x[:len(y)], atol=1e-10)


def test_istft_pads_when_length_exceeds_cover():
    x = np.random.default_rng(4).normal(size=500)
    spec = stft(Waveform(x), SMALL)
    y = istft(spec, length=600)
    covered = (spec.data.shape[0] - 1) * SMALL.hop + SMALL.n_fft - SMALL.n_fft // 2
    assert len(y) == 600
    assert np.allclose(y.samples[:500], x, atol=1e-10)
    assert np.all(y.samples[covered:] == 0.0)  # beyond the last covered sample


@pytest.mark.parametrize("hop", [96, 256])
def test_istft_requires_even_overlap(hop):
    params = StftParams(n_fft=256, hop=hop, win_length=256)
    spec = stft(Waveform(np.random.default_rng(5).normal(size=1024)), params)
    with pytest.raises(ColaError, match="exact synthesis"):
        istft(spec)


def test_stft_rejects_short_and_empty_signals():
    params = StftParams(n_fft=256, hop=64, win_length=256, center=False)
    with pytest.raises(DspError, match="shorter than one frame"):
        stft(Waveform(np.zeros(100)), params)
    with pytest.raises(DspError, match="empty"):
        stft(Waveform(np.zeros(0)), params)


def test_padded_window_centers_short_windows():
    params = StftParams(n_fft=32, hop=8, win_length=16, center=False)
    x = np.random.default_rng(6).normal(size=64)
    spec = stft(Waveform(x), params)
    window = np.pad(hann_window(16), (8, 8))
    assert np.allclose(spec.data[0], naive_dft(x[:32] * window), atol=1e-9)


def test_mel_scale_fixed_points():
    assert hz_to_mel(0.0) == 0.0
    # 2595 * log10(2), the scale's defining octave point
    assert hz_to_mel(700.0) == pytest.approx(781.1728387480312, abs=1e-12)
    freqs = np.array([10.0, 440.0, 3000.0, 7999.0])
    assert np.allclose(mel_to_hz(hz_to_mel(freqs)), freqs, rtol=1e-12)


def test_mel_filterbank_matches_scalar_reference():
    fb = mel_filterbank(6, 64, sample_rate=16000, fmin=100.0, fmax=7000.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(100.0), hz_to_mel(7000.0), 8))
    for m in range(6):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        for k in range(33):
            f = k * 16000.0 / 64.0
            if lo <= f <= center:
                expected = (f - lo) / (center - lo)
            elif center < f <= hi:
                expected = (hi - f) / (hi - center)
            else:
                expected = 0.0
            assert fb.weights[m, k] == pytest.approx(expected, abs=1e-12)


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(40, 512)
    assert fb.weights.shape == (40, 257)
    assert fb.n_mels == 40
    assert np.all(fb.weights >= 0.0) and fb.weights.max() <= 1.0
    assert np.all(fb.weights.sum(axis=1) > 0.0)


@pytest.mark.parametrize("kwargs", [
    {"n_mels": 0},
    {"fmin": -1.0},
    {"fmin": 5000.0, "fmax": 4000.0},
    {"fmax": 9000.0},
])
def test_mel_filterbank_errors(kwargs):
    with pytest.raises(DspError):
        mel_filterbank(**{"n_mels": 10, "n_fft": 256, **kwargs})


def test_mel_spectrogram_is_projected_power():
    rng = np.random.default_rng(9)
    x = rng.normal(size=2000)
    fb = mel_filterbank(20, 256)
    mel = mel_spectrogram(Waveform(x), SMALL, fb)
    power = np.abs(stft(Waveform(x), SMALL).data) ** 2
    assert np.allclose(mel.data, power @ fb.weights.T, rtol=1e-12)
    assert mel.domain == "power"


def test_mel_spectrogram_rejects_mismatched_geometry():
    x = Waveform(np.zeros(2000))
    with pytest.raises(DspError, match="n_fft"):
        mel_spectrogram(x, SMALL, mel_filterbank(20, 512))
    with pytest.raises(DspError, match="Hz"):
        mel_spectrogram(Waveform(np.zeros(2000), sample_rate=8000),
                        StftParams(n_fft=256, hop=64, win_length=256),
                        mel_filterbank(20, 256, sample_rate=16000))


def test_log_compress_floors_then_logs():
    fb = mel_filterbank(4, 64)
    data = np.array([[0.0, 1e-12, 1.0, np.e]])
    mel = MelSpectrogram(data=data, params=SMALL, filterbank=fb)
    logged = log_compress(mel, floor=1e-10)
    assert logged.domain == "log"
    assert np.allclose(logged.data, [[np.log(1e-10), np.log(1e-10), 0.0, 1.0]])
    with pytest.raises(DspError, match="power"):
        log_compress(logged)
    with pytest.raises(DspError, match="floor"):
        log_compress(mel, floor=0.0)


def test_mel_to_linear_solves_least_squares():
    # a mel frame produced from a real power spectrum must be reproduced
    # exactly by re-projecting the inverted spectrum
    rng = np.random.default_rng(10)
    fb = mel_filterbank(20, 128)
    bins = np.arange(65)
    power = np.stack([
        np.exp(-0.5 * ((bins - c) / 9.0) ** 2) + 0.05 for c in (12.0, 30.0, 48.0)
    ]) * rng.uniform(0.5, 2.0, size=(3, 1))
    mel = MelSpectrogram(data=power @ fb.weights.T,
                         params=StftParams(n_fft=128, hop=32, win_length=128),
                         filterbank=fb)
    mag = mel_to_linear(mel)
    assert np.all(mag.data >= 0.0)
    reproj = (mag.data ** 2) @ fb.weights.T
    err = np.linalg.norm(reproj - mel.data) / np.linalg.norm(mel.data)
    assert err < 1e-8


def test_mel_to_linear_requires_power_domain():
    fb = mel_filterbank(4, 64)
    mel = MelSpectrogram(data=np.ones((2, 4)), params=SMALL, filterbank=fb,
                         domain="log")
    with pytest.raises(DspError, match="power"):
        mel_to_linear(mel)


def _bumpy_signal(n=4000):
    t = np.arange(n) / 16000.0
    x = (np.sin(2 * np.pi * 220 * t) + 0.5 * np.sin(2 * np.pi * 680 * t)
         + 0.1 * np.random.default_rng(11).normal(size=n))
    return Waveform(x)


def test_griffin_lim_convergence_is_monotone():
    fb = mel_filterbank(20, 256)
    mel = mel_spectrogram(_bumpy_signal(), SMALL, fb)
    mag = mel_to_linear(mel)
    wave, curve = griffin_lim(mag, n_iters=30)
    assert curve.shape == (30,)
    diffs = np.diff(curve)
    assert np.all(diffs <= 1e-9)
    assert curve[-1] <= curve[0]


def test_griffin_lim_output_length_matches_frames():
    mag = magnitude(stft(_bumpy_signal(), SMALL))
    wave, _ = griffin_lim(mag, n_iters=3)
    assert len(wave) == (mag.data.shape[0] - 1) * SMALL.hop


def test_griffin_lim_input_validation():
    mag = magnitude(stft(_bumpy_signal(), SMALL))
    with pytest.raises(DspError, match="n_iters"):
        griffin_lim(mag, n_iters=0)
    bad = dsp.MagnitudeSpectrogram(data=-np.abs(mag.data), params=SMALL)
    with pytest.raises(DspError, match="nonnegative"):
        griffin_lim(bad, n_iters=1)
