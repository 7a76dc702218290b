"""WAV audio I/O, utterance manifests, and verification trial lists."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PIPELINE_SAMPLE_RATE = 16000

PCM16_SCALE = 32768.0

GENDERS = ("female", "male")

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


class WavFormatError(ValueError):
    """Raised when a WAV file is malformed or uses an unsupported layout."""


class ManifestError(ValueError):
    """Raised when a manifest file cannot be parsed into utterance records."""


class TrialError(ValueError):
    """Raised when a trial list is malformed or degenerate."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio held as float64 samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise WavFormatError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise WavFormatError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    gender: str
    path: Path


@dataclass
class Manifest:
    """Ordered collection of utterance records with a corpus label."""

    label: str
    records: list[UtteranceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def speakers(self) -> list[str]:
        seen = {}
        for rec in self.records:
            seen.setdefault(rec.speaker_id, None)
        return list(seen)

    def by_id(self) -> dict[str, UtteranceRecord]:
        return {rec.utt_id: rec for rec in self.records}


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    is_target: bool


@dataclass
class TrialList:
    subset: str
    trials: list[Trial] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def n_target(self) -> int:
        return sum(1 for t in self.trials if t.is_target)

    @property
    def n_nontarget(self) -> int:
        return sum(1 for t in self.trials if not t.is_target)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise WavFormatError(f"truncated WAV file while reading {what}")
    return buf


def read_wav(path: str | Path) -> Waveform:
    """Load a mono 16 kHz WAV file (16-bit PCM or 32-bit float).

    Float samples outside [-1, 1] are clamped on read.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        riff = _read_exact(fh, 12, "RIFF header")
        if riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise WavFormatError(f"not a RIFF/WAVE file: {path}")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) != 8:
                raise WavFormatError("truncated WAV file while reading chunk header")
            cid, size = struct.unpack("<4sI", head)
            if cid == b"fmt ":
                if size < 16:
                    raise WavFormatError(f"fmt chunk too small ({size} bytes)")
                body = _read_exact(fh, size, "fmt chunk")
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif cid == b"data":
                data = _read_exact(fh, size, "data chunk")
                if size % 2 == 1:
                    fh.read(1)
                continue
            else:
                fh.seek(size + (size % 2), 1)
        if fmt is None:
            raise WavFormatError(f"missing fmt chunk: {path}")
        if data is None:
            raise WavFormatError(f"missing data chunk: {path}")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise WavFormatError(f"unsupported channel count {channels}, expected mono")
    if rate != PIPELINE_SAMPLE_RATE:
        raise WavFormatError(
            f"unsupported sample rate {rate} Hz, expected {PIPELINE_SAMPLE_RATE}"
        )
    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / PCM16_SCALE
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        samples = np.clip(raw.astype(np.float64), -1.0, 1.0)
    else:
        raise WavFormatError(
            f"unsupported encoding (format={audio_format}, bits={bits}); "
            "expected 16-bit PCM or 32-bit float"
        )
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(waveform: Waveform, path: str | Path, encoding: str = "pcm16") -> None:
    """Write a mono WAV file as 16-bit PCM or 32-bit float."""
    path = Path(path)
    rate = waveform.sample_rate
    if encoding == "pcm16":
        codes = np.rint(waveform.samples * PCM16_SCALE)
        codes = np.clip(codes, -32768, 32767).astype("<i2")
        payload = codes.tobytes()
        audio_format, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = waveform.samples.astype("<f4").tobytes()
        audio_format, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise WavFormatError(f"unsupported encoding {encoding!r}")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        1,
        rate,
        rate * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_manifest(path: str | Path, label: str | None = None) -> Manifest:
    """Parse a tab-separated manifest of ``utt_id speaker_id gender wav_path``.

    Lines starting with ``#`` and blank lines are ignored.  Relative wav
    paths resolve against the manifest's directory.  The corpus label
    defaults to the file stem.
    """
    path = Path(path)
    base = path.parent
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ManifestError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}"
                )
            utt_id, speaker_id, gender, wav = (f.strip() for f in fields)
            if not utt_id or not speaker_id or not wav:
                raise ManifestError(f"{path}:{lineno}: empty field")
            if gender not in GENDERS:
                raise ManifestError(
                    f"{path}:{lineno}: unknown gender {gender!r}, expected one of {GENDERS}"
                )
            if utt_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            wav_path = Path(wav)
            if not wav_path.is_absolute():
                wav_path = base / wav_path
            records.append(UtteranceRecord(utt_id, speaker_id, gender, wav_path))
    return Manifest(label=label if label is not None else path.stem, records=records)


def save_manifest(manifest: Manifest, path: str | Path, relative_to: str | Path | None = None) -> None:
    """Write a manifest as TSV.  Paths under ``relative_to`` are stored relative."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            wav = rec.path
            if relative_to is not None:
                try:
                    wav = wav.relative_to(Path(relative_to))
                except ValueError:
                    pass
            fh.write(f"{rec.utt_id}\t{rec.speaker_id}\t{rec.gender}\t{wav}\n")


def load_trials(path: str | Path, subset: str | None = None) -> TrialList:
    """Parse a whitespace-separated trial list of ``enroll test target|nontarget``."""
    path = Path(path)
    trials: list[Trial] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise TrialError(
                    f"{path}:{lineno}: expected 3 fields, got {len(fields)}"
                )
            enroll, test, label = fields
            if label == "target":
                is_target = True
            elif label == "nontarget":
                is_target = False
            else:
                raise TrialError(
                    f"{path}:{lineno}: label must be 'target' or 'nontarget', got {label!r}"
                )
            trials.append(Trial(enroll, test, is_target))
    tl = TrialList(subset=subset if subset is not None else path.stem, trials=trials)
    if tl.n_target == 0:
        raise TrialError(f"{path}: trial list has no target trials")
    if tl.n_nontarget == 0:
        raise TrialError(f"{path}: trial list has no nontarget trials")
    return tl


def save_trials(trial_list: TrialList, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in trial_list.trials:
            label = "target" if t.is_target else "nontarget"
            fh.write(f"{t.enroll_id} {t.test_id} {label}\n")
