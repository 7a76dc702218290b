"""Bundled synthetic speech corpus for tests and demos.

Voices are harmonic sine mixtures shaped by per-speaker spectral
envelopes (three resonance bumps), with per-speaker pitch and amplitude
modulation rate.  Utterances vary pitch, resonance positions, modulation
phase, and a random syllable gate, so same-speaker utterances differ
while speaker identity stays recoverable.  The corpus is deterministic
given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import (Manifest, Trial, TrialList, UtteranceRecord, Waveform,
                     read_wav, save_manifest, save_trials, write_wav)
from .sr_augment import SrPolicy, augment_waveform, utterance_rng


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    gender: str
    f0: float                      # base pitch in Hz
    formants: tuple[float, ...]    # resonance centers in Hz
    bandwidths: tuple[float, ...]  # resonance widths in Hz
    am_rate: float                 # amplitude modulation rate in Hz
    am_depth: float


LADDER_STEP = 1.05  # adjacent same-gender voices differ by 5% in pitch space


def _mel_ladder(base_hz: float, rung: int) -> float:
    return float(dsp.mel_to_hz(dsp.hz_to_mel(base_hz) * LADDER_STEP ** rung))


def default_speakers() -> list[SpeakerProfile]:
    """Eight voices, four per gender, deliberately close together.

    Within a gender, pitch and resonances climb a geometric ladder on the
    mel axis in 5% steps, so between-speaker margins are a fraction of a
    typical vertical-resize displacement.  Each voice also carries its own
    amplitude-modulation rate, a temporal cue a resize cannot move.
    """
    speakers = []
    genders = [("f", "female", 198.0, (660.0, 1700.0, 2700.0)),
               ("m", "male", 112.0, (520.0, 1320.0, 2300.0))]
    am_rates = {"f": (7.0, 8.1, 9.4, 10.9), "m": (7.5, 8.7, 10.1, 11.7)}
    for prefix, gender, f0_base, formant_base in genders:
        for rung in range(4):
            formants = tuple(_mel_ladder(f, rung) for f in formant_base)
            widths = tuple(0.12 * f + 60.0 for f in formants)
            speakers.append(SpeakerProfile(
                speaker_id=f"{prefix}{rung + 1}", gender=gender,
                f0=_mel_ladder(f0_base, rung), formants=formants,
                bandwidths=widths, am_rate=am_rates[prefix][rung],
                am_depth=0.6))
    return speakers


def synth_utterance(profile: SpeakerProfile, duration: float,
                    rng: np.random.Generator, sample_rate: int = 16000) -> Waveform:
    """One utterance of a speaker: jittered harmonics under a syllable gate."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = profile.f0 * (1.0 + rng.uniform(-0.03, 0.03))
    centers = np.array(profile.formants) * (1.0 + rng.uniform(-0.02, 0.02, size=3))
    widths = np.asarray(profile.bandwidths)
    n_harmonics = int(7600.0 // f0)
    freqs = f0 * np.arange(1, n_harmonics + 1)
    envelope = np.zeros(n_harmonics)
    for center, width in zip(centers, widths):
        envelope += np.exp(-0.5 * ((freqs - center) / width) ** 2)
    envelope += 0.02
    envelope *= 1.0 / (1.0 + freqs / 1500.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harmonics)
    voice = (envelope[:, None] * np.sin(
        2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    am_rate = profile.am_rate * (1.0 + rng.uniform(-0.04, 0.04))
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    am = 1.0 - profile.am_depth * 0.5 * (
        1.0 + np.sin(2.0 * np.pi * am_rate * t + am_phase))
    # random syllable gate, kept below the speaker modulation band
    syllable_rate = rng.uniform(2.0, 4.0)
    gate_phase = rng.uniform(0.0, 2.0 * np.pi)
    gate = 0.35 + 0.65 * (0.5 + 0.5 * np.sin(
        2.0 * np.pi * syllable_rate * t + gate_phase)) ** 2
    noise = rng.normal(0.0, 1.0, size=n)
    signal = voice * am * gate + 0.02 * noise
    peak = np.max(np.abs(signal))
    return Waveform(samples=signal * (0.7 / peak), sample_rate=sample_rate)


def _build_trials(manifest: Manifest, gender: str) -> TrialList:
    utts = [rec for rec in manifest.records if rec.gender == gender]
    trials = []
    for i, a in enumerate(utts):
        for b in utts[i + 1:]:
            trials.append(Trial(a.utt_id, b.utt_id,
                                a.speaker_id == b.speaker_id))
    return TrialList(subset=f"eval-{gender}", trials=trials)


def generate_corpus(out_dir: str | Path, seed: int = 1234,
                    train_per_speaker: int = 12, eval_per_speaker: int = 9,
                    duration: float = 1.8,
                    speakers: list[SpeakerProfile] | None = None,
                    ) -> dict[str, Path]:
    """Write the synthetic corpus: WAVs, manifests, and per-gender trials.

    Returns paths keyed ``train_manifest``, ``eval_manifest``,
    ``trials_female``, ``trials_male``.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    if speakers is None:
        speakers = default_speakers()
    train_records = []
    eval_records = []
    for profile in speakers:
        for i in range(train_per_speaker + eval_per_speaker):
            split = "train" if i < train_per_speaker else "eval"
            utt_id = f"{profile.speaker_id}-{split}{i:02d}"
            rng = utterance_rng(seed, utt_id)
            wave = synth_utterance(profile, duration, rng)
            path = wav_dir / f"{utt_id}.wav"
            write_wav(wave, path, encoding="pcm16")
            rec = UtteranceRecord(utt_id, profile.speaker_id, profile.gender, path)
            (train_records if split == "train" else eval_records).append(rec)
    train_manifest = Manifest("train", train_records)
    eval_manifest = Manifest("eval", eval_records)
    paths = {
        "train_manifest": out_dir / "train.tsv",
        "eval_manifest": out_dir / "eval.tsv",
        "trials_female": out_dir / "trials_female.txt",
        "trials_male": out_dir / "trials_male.txt",
    }
    save_manifest(train_manifest, paths["train_manifest"], relative_to=out_dir)
    save_manifest(eval_manifest, paths["eval_manifest"], relative_to=out_dir)
    save_trials(_build_trials(eval_manifest, "female"), paths["trials_female"])
    save_trials(_build_trials(eval_manifest, "male"), paths["trials_male"])
    return paths


def anonymize_corpus(manifest: Manifest, out_dir: str | Path, ratio: float,
                     stft_params: dsp.StftParams = dsp.StftParams(),
                     griffin_lim_iters: int = 60) -> Manifest:
    """Toy anonymization: a fixed vertical mel shift on every utterance.

    Unlike augmentation, utterance ids are preserved so existing trial
    lists keep working; only the manifest label gains an ``-anon`` suffix.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    policy = SrPolicy(ratio_min=ratio, ratio_max=ratio,
                      griffin_lim_iters=griffin_lim_iters)
    records = []
    for rec in manifest.records:
        wave = read_wav(rec.path)
        out_wave, _ = augment_waveform(wave, policy,
                                       np.random.default_rng(0), stft_params)
        path = wav_dir / f"{rec.utt_id}.wav"
        write_wav(out_wave, path, encoding="pcm16")
        records.append(UtteranceRecord(rec.utt_id, rec.speaker_id, rec.gender, path))
    label = manifest.label + "-anon"
    anon = Manifest(label, records)
    save_manifest(anon, out_dir / f"{label}.tsv", relative_to=out_dir)
    return anon
