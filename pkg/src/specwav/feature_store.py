"""On-disk feature matrices, fbank extraction, and CMVN statistics.

Features are stored one matrix per utterance in a small binary container:
magic ``SPWF``, u32 version, u32 rows, u32 cols, a length-prefixed UTF-8
source tag, then row-major float32 little-endian data.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import Manifest, Waveform, read_wav

FEATURE_MAGIC = b"SPWF"
FEATURE_VERSION = 1


class FeatureFormatError(ValueError):
    """Raised when a feature file is malformed or truncated."""


class FeatureError(ValueError):
    """Raised for invalid feature contents or mismatched dimensions."""


@dataclass(frozen=True)
class FbankConfig:
    stft: dsp.StftParams = field(default_factory=dsp.StftParams)
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    @property
    def source_tag(self) -> str:
        return f"fbank{self.n_mels}"


@dataclass(frozen=True)
class FeatureMatrix:
    """A (frames, dim) float32 matrix tagged with its source."""

    data: np.ndarray
    source_tag: str

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise FeatureError(f"feature matrix must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CmvnStats:
    """Per-dimension mean and standard deviation accumulated in float64."""

    mean: np.ndarray
    std: np.ndarray
    frame_count: int


def fbank_source(waveform: Waveform, config: FbankConfig = FbankConfig()) -> FeatureMatrix:
    """Log-mel filterbank features for one waveform.

    Requires at least 25 ms of audio so the centered transform has a frame.
    """
    min_samples = int(round(0.025 * waveform.sample_rate))
    if len(waveform) < min_samples:
        raise FeatureError(
            f"waveform of {len(waveform)} samples is shorter than 25 ms "
            f"({min_samples} samples)"
        )
    fb = dsp.mel_filterbank(config.n_mels, config.stft.n_fft,
                            sample_rate=waveform.sample_rate,
                            fmin=config.fmin, fmax=config.fmax)
    mel = dsp.mel_spectrogram(waveform, config.stft, fb)
    log_mel = dsp.log_compress(mel, floor=config.log_floor)
    return FeatureMatrix(data=log_mel.data.astype(np.float32),
                         source_tag=config.source_tag)


def write_features(matrix: FeatureMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tag = matrix.source_tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise FeatureError(f"source tag too long ({len(tag)} bytes)")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIIH", FEATURE_VERSION, matrix.frames, matrix.dim,
                             len(tag)))
        fh.write(tag)
        fh.write(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())


def read_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"bad magic in feature file {path}")
    if len(blob) < 18:
        raise FeatureFormatError(f"truncated feature header in {path}")
    version, rows, cols, taglen = struct.unpack("<IIIH", blob[4:18])
    if version != FEATURE_VERSION:
        raise FeatureFormatError(
            f"unsupported feature version {version} in {path}, "
            f"expected {FEATURE_VERSION}"
        )
    offset = 18 + taglen
    need = offset + 4 * rows * cols
    if len(blob) < need:
        raise FeatureFormatError(
            f"truncated feature file {path}: expected {need} bytes, got {len(blob)}"
        )
    tag = blob[18:offset].decode("utf-8")
    data = np.frombuffer(blob[offset:need], dtype="<f4").reshape(rows, cols)
    return FeatureMatrix(data=data.copy(), source_tag=tag)


def feature_path(feature_dir: str | Path, utt_id: str) -> Path:
    return Path(feature_dir) / f"{utt_id}.spwf"


def utterance_cmvn(matrix: FeatureMatrix, std_floor: float = 1e-8) -> FeatureMatrix:
    """Normalize a matrix by its own per-dimension mean and deviation."""
    data = matrix.data.astype(np.float64)
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), std_floor)
    return FeatureMatrix(data=((data - mean) / std).astype(np.float32),
                         source_tag=matrix.source_tag)


def extract_corpus(manifest: Manifest, feature_dir: str | Path,
                   config: FbankConfig = FbankConfig(), jobs: int = 1,
                   per_utterance_cmvn: bool = False) -> int:
    """Write fbank features for every manifest utterance.  Returns the count."""
    feature_dir = Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)

    def process(rec) -> None:
        matrix = fbank_source(read_wav(rec.path), config)
        if per_utterance_cmvn:
            matrix = utterance_cmvn(matrix)
        write_features(matrix, feature_path(feature_dir, rec.utt_id))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(process, manifest.records))
    else:
        for rec in manifest.records:
            process(rec)
    return len(manifest.records)


@dataclass
class IngestReport:
    """Validation outcome for externally produced feature files."""

    ok: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    bad_dim: list[tuple[str, int, int]] = field(default_factory=list)  # id, found, expected
    non_finite: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.missing or self.bad_dim or self.non_finite)

    def summary(self) -> str:
        lines = [
            f"ok\t{len(self.ok)}",
            f"missing\t{len(self.missing)}",
            f"bad_dim\t{len(self.bad_dim)}",
            f"non_finite\t{len(self.non_finite)}",
        ]
        for utt in self.missing:
            lines.append(f"missing\t{utt}")
        for utt, found, expected in self.bad_dim:
            lines.append(f"bad_dim\t{utt}\tfound={found}\texpected={expected}")
        for utt in self.non_finite:
            lines.append(f"non_finite\t{utt}")
        return "\n".join(lines) + "\n"


def ingest_external(feature_dir: str | Path, manifest: Manifest,
                    expected_dim: int = 1024) -> IngestReport:
    """Check externally produced feature files against a manifest.

    Every utterance must have a readable file with the expected dimension
    and finite values.  Problems are collected rather than raised.
    """
    feature_dir = Path(feature_dir)
    report = IngestReport()
    for rec in manifest.records:
        path = feature_path(feature_dir, rec.utt_id)
        if not path.exists():
            report.missing.append(rec.utt_id)
            continue
        matrix = read_features(path)
        if matrix.dim != expected_dim:
            report.bad_dim.append((rec.utt_id, matrix.dim, expected_dim))
            continue
        if not np.all(np.isfinite(matrix.data)):
            report.non_finite.append(rec.utt_id)
            continue
        report.ok.append(rec.utt_id)
    return report


def compute_cmvn(manifest: Manifest, feature_dir: str | Path) -> CmvnStats:
    """Global mean/variance stats over a corpus, accumulated in float64."""
    total = None
    total_sq = None
    count = 0
    for rec in manifest.records:
        data = read_features(feature_path(feature_dir, rec.utt_id)).data.astype(np.float64)
        if total is None:
            total = data.sum(axis=0)
            total_sq = (data * data).sum(axis=0)
        else:
            if data.shape[1] != total.shape[0]:
                raise FeatureError(
                    f"feature dim {data.shape[1]} for {rec.utt_id} does not match "
                    f"{total.shape[0]}"
                )
            total += data.sum(axis=0)
            total_sq += (data * data).sum(axis=0)
        count += data.shape[0]
    if count == 0:
        raise FeatureError("cannot compute CMVN over an empty corpus")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    return CmvnStats(mean=mean, std=np.sqrt(var), frame_count=count)


def apply_cmvn(matrix: FeatureMatrix, stats: CmvnStats,
               std_floor: float = 1e-8) -> FeatureMatrix:
    """Normalize a feature matrix to zero mean, unit variance per dimension."""
    if matrix.dim != stats.mean.shape[0]:
        raise FeatureError(
            f"feature dim {matrix.dim} does not match stats dim {stats.mean.shape[0]}"
        )
    std = np.maximum(stats.std, std_floor)
    data = (matrix.data.astype(np.float64) - stats.mean) / std
    return FeatureMatrix(data=data.astype(np.float32), source_tag=matrix.source_tag)


def save_cmvn(stats: CmvnStats, path: str | Path) -> None:
    matrix = FeatureMatrix(
        data=np.stack([stats.mean, stats.std]).astype(np.float32),
        source_tag=f"cmvn:{stats.frame_count}")
    write_features(matrix, path)


def load_cmvn(path: str | Path) -> CmvnStats:
    matrix = read_features(path)
    if not matrix.source_tag.startswith("cmvn:") or matrix.frames != 2:
        raise FeatureFormatError(f"{path} is not a CMVN stats file")
    count = int(matrix.source_tag.split(":", 1)[1])
    return CmvnStats(mean=matrix.data[0].astype(np.float64),
                     std=matrix.data[1].astype(np.float64),
                     frame_count=count)
