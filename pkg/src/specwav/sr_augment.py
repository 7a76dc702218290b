"""Vertical spectrogram-resize augmentation over mel spectrograms."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import Manifest, UtteranceRecord, Waveform, read_wav, save_manifest, write_wav

PAD_MODES = ("repeat_edge", "energy_floor")


class AugmentError(ValueError):
    """Raised for invalid resize ratios or augmentation policies."""


@dataclass(frozen=True)
class SrPolicy:
    """Controls the vertical resize ratio range and the padding rule.

    Ratios are drawn uniformly from [ratio_min, ratio_max].  A ratio above 1
    stretches the mel axis (the top is cropped); below 1 compresses it (the
    top is padded).
    """

    ratio_min: float = 0.85
    ratio_max: float = 1.15
    pad_mode: str = "repeat_edge"
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    griffin_lim_iters: int = 60

    def __post_init__(self):
        if not (0.5 <= self.ratio_min <= self.ratio_max <= 2.0):
            raise AugmentError(
                f"need 0.5 <= ratio_min <= ratio_max <= 2.0, got "
                f"[{self.ratio_min}, {self.ratio_max}]"
            )
        if self.pad_mode not in PAD_MODES:
            raise AugmentError(
                f"pad_mode must be one of {PAD_MODES}, got {self.pad_mode!r}"
            )
        if self.n_mels < 2:
            raise AugmentError(f"n_mels must be >= 2, got {self.n_mels}")
        if self.griffin_lim_iters < 1:
            raise AugmentError(
                f"griffin_lim_iters must be >= 1, got {self.griffin_lim_iters}"
            )


def resize_vertical(frames: np.ndarray, ratio: float,
                    pad_mode: str = "repeat_edge") -> np.ndarray:
    """Linearly resample each frame's mel axis by ``ratio``, keeping its size.

    Each frame of ``n`` values is resampled onto ``m = round(n * ratio)``
    points at positions ``j * (n - 1) / (m - 1)``.  When ``m > n`` the
    lowest ``n`` values are kept; when ``m < n`` the frame is padded back to
    ``n`` with the last resampled value (``repeat_edge``) or the frame
    minimum (``energy_floor``).  A ratio of exactly 1 is the identity.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise AugmentError(f"expected (frames, n_mels) input, got shape {frames.shape}")
    if not (0.5 <= ratio <= 2.0):
        raise AugmentError(f"ratio must lie in [0.5, 2.0], got {ratio}")
    if pad_mode not in PAD_MODES:
        raise AugmentError(f"pad_mode must be one of {PAD_MODES}, got {pad_mode!r}")
    n = frames.shape[1]
    if n < 2:
        raise AugmentError(f"need at least 2 mel bands, got {n}")
    m = int(round(n * ratio))
    if m < 2:
        raise AugmentError(f"ratio {ratio} collapses {n} bands to {m} points")
    pos = np.arange(m) * ((n - 1) / (m - 1))
    idx = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - idx
    resized = frames[:, idx] * (1.0 - frac) + frames[:, idx + 1] * frac
    if m >= n:
        return resized[:, :n]
    out = np.empty_like(frames)
    out[:, :m] = resized
    if pad_mode == "repeat_edge":
        out[:, m:] = resized[:, m - 1:m]
    else:
        out[:, m:] = frames.min(axis=1, keepdims=True)
    return out


def augment_waveform(waveform: Waveform, policy: SrPolicy,
                     rng: np.random.Generator,
                     stft_params: dsp.StftParams = dsp.StftParams(),
                     ) -> tuple[Waveform, float]:
    """Resize the mel spectrogram vertically and resynthesize the waveform.

    Draws one ratio from the policy range, applies the mel-domain resize,
    inverts back to linear magnitude, runs Griffin-Lim, and rescales the
    result to the input's peak amplitude and sample count.
    """
    ratio = float(rng.uniform(policy.ratio_min, policy.ratio_max))
    fb = dsp.mel_filterbank(policy.n_mels, stft_params.n_fft,
                            sample_rate=waveform.sample_rate,
                            fmin=policy.fmin, fmax=policy.fmax)
    mel = dsp.mel_spectrogram(waveform, stft_params, fb)
    warped = dsp.MelSpectrogram(
        data=resize_vertical(mel.data, ratio, policy.pad_mode),
        params=stft_params, filterbank=fb, domain="power")
    mag = dsp.mel_to_linear(warped)
    synth, _ = dsp.griffin_lim(mag, n_iters=policy.griffin_lim_iters)
    y = synth.samples
    n = len(waveform.samples)
    y = y[:n] if len(y) >= n else np.pad(y, (0, n - len(y)))
    in_peak = np.max(np.abs(waveform.samples))
    out_peak = np.max(np.abs(y))
    if out_peak > 0.0:
        y = y * (in_peak / out_peak)
    return Waveform(samples=y, sample_rate=waveform.sample_rate), ratio


def utterance_rng(seed: int, utt_id: str) -> np.random.Generator:
    """Generator derived from a base seed and a stable hash of the id.

    Independent of processing order, worker count, and interpreter hash
    randomization.
    """
    digest = hashlib.blake2b(utt_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def augment_corpus(manifest: Manifest, policy: SrPolicy, out_dir: str | Path,
                   seed: int = 0,
                   stft_params: dsp.StftParams = dsp.StftParams(),
                   jobs: int = 1) -> tuple[Manifest, dict[str, float]]:
    """Augment every utterance in a manifest, writing WAVs and a new manifest.

    Output utterance ids carry an ``-sr`` suffix and the manifest label an
    ``-augmented`` suffix.  Each utterance's ratio comes from its own
    derived generator, so results are byte-identical for a given seed
    regardless of ``jobs``.  Returns the new manifest and the ratio log.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)

    def process(rec: UtteranceRecord) -> tuple[UtteranceRecord, float]:
        wave = read_wav(rec.path)
        rng = utterance_rng(seed, rec.utt_id)
        out_wave, ratio = augment_waveform(wave, policy, rng, stft_params)
        new_id = rec.utt_id + "-sr"
        out_path = wav_dir / f"{new_id}.wav"
        write_wav(out_wave, out_path, encoding="pcm16")
        return UtteranceRecord(new_id, rec.speaker_id, rec.gender, out_path), ratio

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(process, manifest.records))
    else:
        results = [process(rec) for rec in manifest.records]

    label = manifest.label + "-augmented"
    out_manifest = Manifest(label=label, records=[rec for rec, _ in results])
    ratios = {rec.utt_id: ratio for rec, ratio in results}
    save_manifest(out_manifest, out_dir / f"{label}.tsv", relative_to=out_dir)
    with open(out_dir / "ratios.tsv", "w", encoding="utf-8") as fh:
        for rec, ratio in results:
            fh.write(f"{rec.utt_id}\t{ratio!r}\n")
    return out_manifest, ratios
