"""Run a pretrained Wav2Vec2-style encoder over a corpus manifest and write
one feature file per utterance.

The output is the SPWF container the attack toolkit's feature store reads:
magic ``SPWF``, u32 version, u32 rows, u32 cols, a length-prefixed UTF-8
source tag, then row-major float32 little-endian data.  The writer here is
deliberately standalone — the file format, not a library import, is the
contract between the two packages.

Inference only: the encoder is frozen, dropout is disabled, and re-running
an export with the same config rewrites byte-identical files.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"SPWF"
FEATURE_VERSION = 1

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


class BridgeError(ValueError):
    """Raised for configuration problems and encoder/corpus mismatches."""


@dataclass(frozen=True)
class BridgeConfig:
    """What to encode, with what, and where to put the results.

    ``encoder`` is a model identifier or local directory understood by
    ``transformers``.  ``layer_index`` picks an entry of the encoder's
    hidden-state stack: 0 is the convolutional front-end projection,
    1..N are transformer layers, and -1 (default) is the final layer.
    """

    manifest: Path
    out_dir: Path
    encoder: str
    layer_index: int = -1
    device: str = "cpu"
    expected_dim: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.expected_dim < 1:
            raise BridgeError(f"expected_dim must be >= 1, got {self.expected_dim}")

    @property
    def source_tag(self) -> str:
        return f"ssl{self.expected_dim}"


@dataclass
class ExportSummary:
    """Outcome of one export run: per-utterance failures are collected, not raised."""

    count: int = 0
    dim: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> str:
        out = [f"exported\t{self.count}", f"dim\t{self.dim}",
               f"failed\t{len(self.failures)}"]
        for utt_id, message in self.failures:
            out.append(f"failed\t{utt_id}\t{message}")
        return "\n".join(out) + "\n"


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    """Parse a manifest TSV of ``utt_id speaker_id gender wav_path``.

    Only the utterance id and WAV path matter here; relative paths resolve
    against the manifest's directory.
    """
    path = Path(path)
    entries: list[tuple[str, Path]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise BridgeError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, "
                    f"got {len(fields)}"
                )
            utt_id = fields[0].strip()
            wav = fields[3].strip()
            if not utt_id or not wav:
                raise BridgeError(f"{path}:{lineno}: empty field")
            if utt_id in seen:
                raise BridgeError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            wav_path = Path(wav)
            if not wav_path.is_absolute():
                wav_path = path.parent / wav_path
            entries.append((utt_id, wav_path))
    return entries


def read_wav(path: str | Path) -> np.ndarray:
    """Load a mono 16 kHz 16-bit PCM WAV as float32 samples in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise BridgeError(f"{path}: expected mono audio, got "
                              f"{fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise BridgeError(f"{path}: expected 16-bit PCM, got "
                              f"{8 * fh.getsampwidth()}-bit")
        if fh.getframerate() != SAMPLE_RATE:
            raise BridgeError(f"{path}: expected {SAMPLE_RATE} Hz, got "
                              f"{fh.getframerate()} Hz")
        payload = fh.readframes(fh.getnframes())
    codes = np.frombuffer(payload, dtype="<i2")
    return (codes.astype(np.float32)) / PCM16_SCALE


def write_spwf(data: np.ndarray, tag: str, path: str | Path) -> None:
    """Write a (frames, dim) float32 matrix in the SPWF container format."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise BridgeError(f"feature matrix must be 2-D, got shape {data.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoded = tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIIH", FEATURE_VERSION, data.shape[0],
                             data.shape[1], len(encoded)))
        fh.write(encoded)
        fh.write(data.tobytes())


def load_encoder(config: BridgeConfig):
    """Load the frozen encoder and check its output width up front."""
    import torch
    from transformers import Wav2Vec2Model

    model = Wav2Vec2Model.from_pretrained(config.encoder)
    hidden = model.config.hidden_size
    if hidden != config.expected_dim:
        raise BridgeError(
            f"encoder {config.encoder!r} produces {hidden}-dim frames, "
            f"expected {config.expected_dim}"
        )
    n_states = model.config.num_hidden_layers + 1
    if not -n_states <= config.layer_index < n_states:
        raise BridgeError(
            f"layer_index {config.layer_index} out of range for an encoder "
            f"with {n_states} hidden states"
        )
    model.eval()
    model.to(torch.device(config.device))
    for param in model.parameters():
        param.requires_grad_(False)
    return model


def encode_utterance(model, samples: np.ndarray, layer_index: int,
                     device: str) -> np.ndarray:
    """One waveform -> (frames, hidden_size) float32 matrix."""
    import torch

    batch = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))
    batch = batch.unsqueeze(0).to(torch.device(device))
    with torch.inference_mode():
        output = model(batch, output_hidden_states=True)
    frames = output.hidden_states[layer_index][0]
    return frames.cpu().numpy().astype(np.float32)


def export_features(config: BridgeConfig) -> ExportSummary:
    """Encode every manifest utterance to ``<out_dir>/<utt_id>.spwf``.

    Per-utterance problems (unreadable audio, inputs too short for the
    encoder's front end) are collected in the summary; a dimension mismatch
    between the encoder and ``expected_dim`` aborts before any file is
    written.
    """
    entries = read_manifest(config.manifest)
    model = load_encoder(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    summary = ExportSummary(dim=config.expected_dim)
    for utt_id, wav_path in entries:
        try:
            samples = read_wav(wav_path)
            matrix = encode_utterance(model, samples, config.layer_index,
                                      config.device)
            write_spwf(matrix, config.source_tag,
                       config.out_dir / f"{utt_id}.spwf")
        except Exception as exc:  # any per-utterance problem: collect, keep going
            summary.failures.append((utt_id, str(exc)))
            continue
        summary.count += 1
    return summary
