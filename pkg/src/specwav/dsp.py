"""Spectral analysis and synthesis: STFT, mel filterbanks, Griffin-Lim."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Waveform


class DspError(ValueError):
    """Raised for invalid spectral parameters or mismatched operands."""


class ColaError(DspError):
    """Raised when the analysis window and hop cannot be inverted exactly."""


@dataclass(frozen=True)
class StftParams:
    """Short-time Fourier transform geometry.

    The hop must divide the window length with at least 2x overlap so the
    periodic Hann window sums to a constant and synthesis is exact.
    """

    n_fft: int = 1024
    hop: int = 256
    win_length: int = 1024
    center: bool = True

    def __post_init__(self):
        if self.n_fft < 2 or (self.n_fft & (self.n_fft - 1)) != 0:
            raise DspError(f"n_fft must be a power of two >= 2, got {self.n_fft}")
        if not (1 <= self.hop <= self.win_length <= self.n_fft):
            raise DspError(
                f"need 1 <= hop <= win_length <= n_fft, got "
                f"hop={self.hop}, win_length={self.win_length}, n_fft={self.n_fft}"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window of the given length."""
    if length < 1:
        raise DspError(f"window length must be >= 1, got {length}")
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _check_cola(params: StftParams) -> None:
    if params.win_length % params.hop != 0 or params.win_length // params.hop < 2:
        raise ColaError(
            f"hop {params.hop} does not evenly overlap window {params.win_length}; "
            "exact synthesis requires hop = win_length / k with integer k >= 2"
        )


def _padded_window(params: StftParams) -> np.ndarray:
    # window centered inside the FFT frame when win_length < n_fft
    win = hann_window(params.win_length)
    if params.win_length == params.n_fft:
        return win
    pad = params.n_fft - params.win_length
    left = pad // 2
    return np.pad(win, (left, pad - left))


@dataclass(frozen=True)
class ComplexSpectrogram:
    data: np.ndarray  # (frames, bins) complex128
    params: StftParams


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    data: np.ndarray  # (frames, bins) float64, nonnegative
    params: StftParams


@dataclass(frozen=True)
class FilterBank:
    """Triangular mel filters as a dense (n_mels, n_bins) weight matrix."""

    weights: np.ndarray
    n_fft: int
    sample_rate: int
    fmin: float
    fmax: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MelSpectrogram:
    data: np.ndarray  # (frames, n_mels) float64
    params: StftParams
    filterbank: FilterBank
    domain: str = "power"  # "power" or "log"


def _frame_count(n_samples: int, params: StftParams) -> int:
    return 1 + (n_samples - params.n_fft) // params.hop


def _stft_array(x: np.ndarray, params: StftParams, center: bool) -> np.ndarray:
    if x.ndim != 1:
        raise DspError(f"expected 1-D signal, got shape {x.shape}")
    if len(x) < 1:
        raise DspError("cannot transform an empty signal")
    if center:
        x = np.pad(x, params.n_fft // 2, mode="reflect")
    if len(x) < params.n_fft:
        raise DspError(
            f"signal of {len(x)} samples is shorter than one frame ({params.n_fft})"
        )
    window = _padded_window(params)
    n_frames = _frame_count(len(x), params)
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft)[:: params.hop]
    frames = frames[:n_frames]
    return np.fft.rfft(frames * window, n=params.n_fft, axis=1)


def _istft_array(spec: np.ndarray, params: StftParams, center: bool,
                 length: Optional[int] = None) -> np.ndarray:
    if spec.ndim != 2 or spec.shape[1] != params.n_bins:
        raise DspError(
            f"expected (frames, {params.n_bins}) spectrogram, got shape {spec.shape}"
        )
    _check_cola(params)
    n_frames = spec.shape[0]
    window = _padded_window(params)
    total = (n_frames - 1) * params.hop + params.n_fft
    frames = np.fft.irfft(spec, n=params.n_fft, axis=1)
    acc = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n_frames):
        start = t * params.hop
        acc[start:start + params.n_fft] += frames[t] * window
        wsum[start:start + params.n_fft] += window * window
    covered = wsum > 1e-100
    out = np.zeros(total)
    out[covered] = acc[covered] / wsum[covered]
    if center:
        half = params.n_fft // 2
        # keep the full covered tail; an explicit length decides the cut
        out = out[half:] if length is not None else out[half:total - half]
    if length is not None:
        if length > len(out):
            out = np.pad(out, (0, length - len(out)))
        else:
            out = out[:length]
    return out


def stft(waveform: Waveform, params: StftParams = StftParams()) -> ComplexSpectrogram:
    """Complex STFT with a periodic Hann window.

    With ``center=True`` the signal is reflect-padded by ``n_fft // 2`` so
    frame ``t`` is centered on sample ``t * hop``.
    """
    data = _stft_array(waveform.samples, params, params.center)
    return ComplexSpectrogram(data=data, params=params)


def istft(spec: ComplexSpectrogram, length: Optional[int] = None) -> Waveform:
    """Least-squares inverse STFT via window-weighted overlap-add.

    Reconstruction is exact wherever the squared-window overlap is nonzero.
    """
    out = _istft_array(spec.data, spec.params, spec.params.center, length)
    return Waveform(samples=out)


def magnitude(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(data=np.abs(spec.data), params=spec.params)


def hz_to_mel(hz):
    """HTK mel scale: ``2595 * log10(1 + hz / 700)``."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (np.power(10.0, np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = 16000,
                   fmin: float = 0.0, fmax: float = 8000.0) -> FilterBank:
    """Peak-1 triangular filters on ``n_mels + 2`` equally spaced mel points."""
    if n_mels < 1:
        raise DspError(f"n_mels must be >= 1, got {n_mels}")
    nyquist = sample_rate / 2.0
    if not (0.0 <= fmin < fmax <= nyquist):
        raise DspError(
            f"need 0 <= fmin < fmax <= nyquist ({nyquist}), got fmin={fmin}, fmax={fmax}"
        )
    n_bins = n_fft // 2 + 1
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)
    weights = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    return FilterBank(weights=weights, n_fft=n_fft, sample_rate=sample_rate,
                      fmin=fmin, fmax=fmax)


def mel_spectrogram(waveform: Waveform, params: StftParams,
                    filterbank: FilterBank) -> MelSpectrogram:
    """Power mel spectrogram: ``|STFT|^2`` projected through the filterbank."""
    if filterbank.n_fft != params.n_fft:
        raise DspError(
            f"filterbank built for n_fft={filterbank.n_fft}, params use {params.n_fft}"
        )
    if filterbank.sample_rate != waveform.sample_rate:
        raise DspError(
            f"filterbank built for {filterbank.sample_rate} Hz, "
            f"waveform is {waveform.sample_rate} Hz"
        )
    spec = _stft_array(waveform.samples, params, params.center)
    power = np.abs(spec) ** 2
    return MelSpectrogram(data=power @ filterbank.weights.T, params=params,
                          filterbank=filterbank, domain="power")


def log_compress(mel: MelSpectrogram, floor: float = 1e-10) -> MelSpectrogram:
    """Natural log of a power mel spectrogram with values floored first."""
    if floor <= 0.0:
        raise DspError(f"log floor must be positive, got {floor}")
    if mel.domain != "power":
        raise DspError(f"log_compress expects a power spectrogram, got {mel.domain!r}")
    return MelSpectrogram(data=np.log(np.maximum(mel.data, floor)), params=mel.params,
                          filterbank=mel.filterbank, domain="log")


def mel_to_linear(mel: MelSpectrogram) -> MagnitudeSpectrogram:
    """Least-squares inversion of a power mel spectrogram to linear magnitude.

    Solves for the nonnegative linear power spectrum via the filterbank
    pseudo-inverse, clamps negatives, and takes the square root.
    """
    if mel.domain != "power":
        raise DspError(f"mel_to_linear expects a power spectrogram, got {mel.domain!r}")
    fb = mel.filterbank.weights
    if np.linalg.matrix_rank(fb) < fb.shape[0]:
        raise DspError("filterbank is rank deficient; mel inversion is ill-posed")
    power = mel.data @ np.linalg.pinv(fb.T)
    return MagnitudeSpectrogram(data=np.sqrt(np.maximum(power, 0.0)), params=mel.params)


def griffin_lim(mag: MagnitudeSpectrogram, n_iters: int = 60,
                ) -> tuple[Waveform, np.ndarray]:
    """Phase recovery by alternating projection from a magnitude spectrogram.

    Returns the synthesized waveform and the per-iteration spectral
    convergence curve ``|| |STFT(y)| - M ||_F / ||M||_F``, which is
    non-increasing because each half-step is an exact projection.
    """
    if n_iters < 1:
        raise DspError(f"n_iters must be >= 1, got {n_iters}")
    params = mag.params
    target = np.asarray(mag.data, dtype=np.float64)
    if np.any(target < 0.0) or not np.all(np.isfinite(target)):
        raise DspError("magnitude spectrogram must be finite and nonnegative")
    norm = np.linalg.norm(target)
    # run the projection pair uncentered so analysis exactly inverts synthesis
    spec = target.astype(np.complex128)
    convergence = np.empty(n_iters)
    for i in range(n_iters):
        y = _istft_array(spec, params, center=False)
        reproj = _stft_array(y, params, center=False)
        dist = np.linalg.norm(np.abs(reproj) - target)
        convergence[i] = dist / norm if norm > 0.0 else 0.0
        phase = np.exp(1j * np.angle(reproj))
        spec = target * phase
    y = _istft_array(spec, params, center=False)
    if params.center:
        half = params.n_fft // 2
        y = y[half:len(y) - half] if len(y) > 2 * half else y[:0]
    return Waveform(samples=y), convergence
