"""Two-stage incremental training with bit-exact checkpoints.

A checkpoint captures everything needed to continue a run: configuration,
parameters, optimizer moments, label map, epoch counter, and the training
generator's state.  Training N epochs then resuming for M more is
bit-identical to training N+M epochs in one call, and results do not
depend on the worker count because per-utterance gradients are reduced in
manifest order and all random draws happen on the coordinating thread.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import embedder
from .corpus import Manifest, load_manifest
from .feature_store import CmvnStats, apply_cmvn, feature_path, load_cmvn, read_features

CHECKPOINT_MAGIC = b"SPWC"
CHECKPOINT_VERSION = 1

_VALIDATION_STREAM = 0x5641  # distinguishes the split draw from training draws


class TrainerError(ValueError):
    """Raised for invalid stage plans or inconsistent continuation."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or truncated."""


@dataclass(frozen=True)
class StagePlan:
    """One training stage over one manifest."""

    stage_id: int
    manifest_path: Path
    feature_dir: Path
    epochs: int
    batch_size: int = 32
    chunk_frames: int = 200
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.05
    cmvn_path: Path | None = None
    # optionally blend in a fraction of a second corpus (e.g. clean data
    # during the augmented stage); the head of that manifest is used so the
    # choice is deterministic
    mix_manifest_path: Path | None = None
    mix_feature_dir: Path | None = None
    mix_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "manifest_path", Path(self.manifest_path))
        object.__setattr__(self, "feature_dir", Path(self.feature_dir))
        if self.cmvn_path is not None:
            object.__setattr__(self, "cmvn_path", Path(self.cmvn_path))
        if self.mix_manifest_path is not None:
            object.__setattr__(self, "mix_manifest_path", Path(self.mix_manifest_path))
        if self.mix_feature_dir is not None:
            object.__setattr__(self, "mix_feature_dir", Path(self.mix_feature_dir))
        if self.stage_id < 1:
            raise TrainerError(f"stage_id must be >= 1, got {self.stage_id}")
        if self.epochs < 1:
            raise TrainerError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.chunk_frames < 1:
            raise TrainerError(f"chunk_frames must be >= 1, got {self.chunk_frames}")
        if self.lr <= 0.0:
            raise TrainerError(f"lr must be positive, got {self.lr}")
        if not (0.0 < self.val_fraction < 1.0):
            raise TrainerError(
                f"val_fraction must lie in (0, 1), got {self.val_fraction}"
            )
        if not (0.0 <= self.mix_fraction <= 1.0):
            raise TrainerError(
                f"mix_fraction must lie in [0, 1], got {self.mix_fraction}"
            )
        if self.mix_fraction > 0.0 and (self.mix_manifest_path is None
                                        or self.mix_feature_dir is None):
            raise TrainerError(
                "mix_fraction > 0 requires a mix manifest and feature dir"
            )

    def fingerprint(self) -> dict:
        return {
            "stage_id": self.stage_id,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "chunk_frames": self.chunk_frames,
            "lr": self.lr,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "mix_fraction": self.mix_fraction,
        }


@dataclass
class Checkpoint:
    config: embedder.EmbedderConfig
    params: dict[str, np.ndarray]
    opt_state: embedder.AdamState
    rng_state: dict
    label_map: dict[str, int]
    epoch: int
    stage_id: int
    plan_fingerprint: dict


@dataclass
class LossCurve:
    """Per-epoch train and validation losses with absolute epoch numbers."""

    epochs: list[int] = field(default_factory=list)
    train: list[float] = field(default_factory=list)
    valid: list[float] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, valid_loss: float) -> None:
        self.epochs.append(epoch)
        self.train.append(train_loss)
        self.valid.append(valid_loss)

    def extend(self, other: "LossCurve") -> None:
        self.epochs.extend(other.epochs)
        self.train.extend(other.train)
        self.valid.extend(other.valid)


def write_loss_curve(curve: LossCurve, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,valid_loss\n")
        for e, tr, va in zip(curve.epochs, curve.train, curve.valid):
            fh.write(f"{e},{tr!r},{va!r}\n")


def read_loss_curve(path: str | Path) -> LossCurve:
    curve = LossCurve()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "epoch,train_loss,valid_loss":
            raise TrainerError(f"unexpected loss curve header in {path}: {header!r}")
        for line in fh:
            e, tr, va = line.strip().split(",")
            curve.append(int(e), float(tr), float(va))
    return curve


def _write_tensor_table(fh, tensors: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint {self.path}: ran out of bytes reading {what}"
            )
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_tensor_table(reader: _Reader) -> dict[str, np.ndarray]:
    (count,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (namelen,) = reader.unpack("<H", "tensor name length")
        name = reader.take(namelen, "tensor name").decode("utf-8")
        (ndim,) = reader.unpack("<B", "tensor rank")
        shape = reader.unpack(f"<{ndim}I", "tensor shape")
        n_items = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * n_items, f"tensor {name}"), dtype="<f8")
        tensors[name] = data.reshape(shape).copy()
    return tensors


def _config_to_dict(config: embedder.EmbedderConfig) -> dict:
    d = asdict(config)
    d["tdnn_layers"] = [list(layer) for layer in config.tdnn_layers]
    return d


def _config_from_dict(d: dict) -> embedder.EmbedderConfig:
    d = dict(d)
    d["tdnn_layers"] = tuple(tuple(layer) for layer in d["tdnn_layers"])
    return embedder.EmbedderConfig(**d)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Serialize a checkpoint; loading it back is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": _config_to_dict(ckpt.config),
        "label_map": ckpt.label_map,
        "epoch": ckpt.epoch,
        "stage_id": ckpt.stage_id,
        "plan_fingerprint": ckpt.plan_fingerprint,
    }
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    rng_blob = json.dumps(ckpt.rng_state, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        _write_tensor_table(fh, ckpt.params)
        fh.write(struct.pack("<Q", ckpt.opt_state.step))
        _write_tensor_table(fh, ckpt.opt_state.m)
        _write_tensor_table(fh, ckpt.opt_state.v)
        fh.write(struct.pack("<I", len(rng_blob)))
        fh.write(rng_blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in checkpoint {path}")
    reader = _Reader(blob, path)
    reader.take(4, "magic")
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} in {path}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    (meta_len,) = reader.unpack("<I", "metadata length")
    meta = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
    params = _read_tensor_table(reader)
    (step,) = reader.unpack("<Q", "optimizer step")
    m = _read_tensor_table(reader)
    v = _read_tensor_table(reader)
    (rng_len,) = reader.unpack("<I", "rng state length")
    rng_state = json.loads(reader.take(rng_len, "rng state").decode("utf-8"))
    return Checkpoint(
        config=_config_from_dict(meta["config"]),
        params=params,
        opt_state=embedder.AdamState(step=step, m=m, v=v),
        rng_state=rng_state,
        label_map=meta["label_map"],
        epoch=meta["epoch"],
        stage_id=meta["stage_id"],
        plan_fingerprint=meta["plan_fingerprint"],
    )


def _load_utterance_features(items: list[tuple[str, Path]],
                             cmvn: CmvnStats | None,
                             min_frames: int) -> dict[str, np.ndarray]:
    feats = {}
    for utt_id, feature_dir in items:
        matrix = read_features(feature_path(feature_dir, utt_id))
        if cmvn is not None:
            matrix = apply_cmvn(matrix, cmvn)
        if matrix.frames < min_frames:
            raise TrainerError(
                f"utterance {utt_id} has {matrix.frames} frames, fewer than "
                f"the receptive field ({min_frames})"
            )
        feats[utt_id] = matrix.data.astype(np.float64)
    return feats


def _validation_split(utt_ids: list[str], plan: StagePlan) -> tuple[list[str], list[str]]:
    n = len(utt_ids)
    if n < 2:
        raise TrainerError(f"need at least 2 utterances to split, got {n}")
    n_val = min(max(1, int(round(n * plan.val_fraction))), n - 1)
    rng = np.random.default_rng([plan.seed, _VALIDATION_STREAM])
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [u for i, u in enumerate(utt_ids) if i not in val_idx]
    val = [u for i, u in enumerate(utt_ids) if i in val_idx]
    return train, val


def train_stage(plan: StagePlan, model_config: embedder.EmbedderConfig | None = None,
                init: Checkpoint | None = None, jobs: int = 1,
                ) -> tuple[Checkpoint, LossCurve]:
    """Run one training stage, fresh or continuing from a checkpoint.

    A fresh run needs ``model_config`` (its input_dim and n_classes are
    filled in from the data).  Continuing with the same stage id resumes an
    interrupted stage and requires an identical plan apart from ``epochs``;
    the saved generator state is restored so the continuation is
    bit-identical to an uninterrupted run.  A higher stage id starts a new
    stage on new data, reseeded from the plan, keeping parameters,
    optimizer moments, and label map.
    """
    manifest = load_manifest(plan.manifest_path)
    if len(manifest) == 0:
        raise TrainerError(f"manifest {plan.manifest_path} is empty")
    cmvn = load_cmvn(plan.cmvn_path) if plan.cmvn_path is not None else None

    records = list(manifest.records)
    dirs = {rec.utt_id: plan.feature_dir for rec in records}
    if plan.mix_fraction > 0.0:
        mix = load_manifest(plan.mix_manifest_path)
        n_mix = int(round(plan.mix_fraction * len(mix)))
        for rec in mix.records[:n_mix]:
            if rec.utt_id in dirs:
                raise TrainerError(
                    f"mix manifest repeats utterance id {rec.utt_id!r}"
                )
            records.append(rec)
            dirs[rec.utt_id] = plan.mix_feature_dir

    if init is None:
        if model_config is None:
            raise TrainerError("a fresh run requires a model config")
        if plan.stage_id != 1:
            raise TrainerError(
                f"stage {plan.stage_id} requires an initial checkpoint"
            )
        speakers = sorted({rec.speaker_id for rec in records})
        label_map = {spk: i for i, spk in enumerate(speakers)}
        probe = read_features(feature_path(dirs[records[0].utt_id],
                                           records[0].utt_id))
        config = replace(model_config, input_dim=probe.dim,
                         n_classes=len(label_map))
        rng = np.random.default_rng(plan.seed)
        params = embedder.init_params(config, rng)
        opt_state = embedder.adam_init(params)
        start_epoch = 0
    else:
        config = init.config
        label_map = init.label_map
        params = {k: p.copy() for k, p in init.params.items()}
        opt_state = embedder.AdamState(
            step=init.opt_state.step,
            m={k: p.copy() for k, p in init.opt_state.m.items()},
            v={k: p.copy() for k, p in init.opt_state.v.items()},
        )
        start_epoch = init.epoch
        if plan.stage_id == init.stage_id:
            saved = dict(init.plan_fingerprint)
            current = plan.fingerprint()
            for key in current:
                if key == "epochs":
                    continue
                if saved.get(key) != current[key]:
                    raise TrainerError(
                        f"cannot resume stage {plan.stage_id}: plan field "
                        f"{key!r} changed from {saved.get(key)!r} to "
                        f"{current[key]!r}"
                    )
            rng = np.random.default_rng()
            rng.bit_generator.state = init.rng_state
        elif plan.stage_id == init.stage_id + 1:
            rng = np.random.default_rng(plan.seed)
        else:
            raise TrainerError(
                f"checkpoint is at stage {init.stage_id}; cannot start "
                f"stage {plan.stage_id}"
            )
        unknown = sorted({rec.speaker_id for rec in records} - set(label_map))
        if unknown:
            raise TrainerError(
                f"manifest {plan.manifest_path} has speakers absent from the "
                f"checkpoint label map: {unknown}"
            )

    labels = {rec.utt_id: label_map[rec.speaker_id] for rec in records}
    feats = _load_utterance_features(
        [(rec.utt_id, dirs[rec.utt_id]) for rec in records], cmvn,
        config.receptive_field)
    for rec in records:
        dim = feats[rec.utt_id].shape[1]
        if dim != config.input_dim:
            raise TrainerError(
                f"utterance {rec.utt_id} has feature dim {dim}, "
                f"model expects {config.input_dim}"
            )

    utt_ids = [rec.utt_id for rec in records]
    train_ids, val_ids = _validation_split(utt_ids, plan)
    hyper = embedder.AdamHyper(lr=plan.lr)
    curve = LossCurve()

    for local_epoch in range(plan.epochs):
        order = rng.permutation(len(train_ids))
        items = []
        for idx in order:
            utt_id = train_ids[idx]
            n_frames = feats[utt_id].shape[0]
            max_start = max(n_frames - plan.chunk_frames, 0)
            start = int(rng.integers(0, max_start + 1))
            items.append((utt_id, start))
        epoch_losses = []
        for b in range(0, len(items), plan.batch_size):
            batch = items[b:b + plan.batch_size]
            chunks = {}
            for utt_id, start in batch:
                chunks[(utt_id, start)] = feats[utt_id][
                    start:start + plan.chunk_frames]

            def one(item):
                utt_id, start = item
                return embedder.loss_and_grads(chunks[item], labels[utt_id],
                                               params, config)

            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(one, batch))
            else:
                results = [one(item) for item in batch]
            # reduce in batch order so results do not depend on jobs
            scale = 1.0 / len(batch)
            mean_grads = {k: np.zeros_like(p) for k, p in params.items()}
            for loss, grads in results:
                epoch_losses.append(loss)
                for k in mean_grads:
                    mean_grads[k] += grads[k]
            for k in mean_grads:
                mean_grads[k] *= scale
            params = embedder.adam_step(params, mean_grads, opt_state, hyper)
        train_loss = float(np.mean(epoch_losses))
        valid_loss = float(np.mean([
            embedder.loss_only(feats[u], labels[u], params, config)
            for u in val_ids]))
        curve.append(start_epoch + local_epoch + 1, train_loss, valid_loss)

    ckpt = Checkpoint(
        config=config,
        params=params,
        opt_state=opt_state,
        rng_state=rng.bit_generator.state,
        label_map=label_map,
        epoch=start_epoch + plan.epochs,
        stage_id=plan.stage_id,
        plan_fingerprint=plan.fingerprint(),
    )
    return ckpt, curve


def evaluate_loss(ckpt: Checkpoint, manifest: Manifest, feature_dir: str | Path,
                  cmvn: CmvnStats | None = None) -> float:
    """Mean full-utterance loss of a checkpoint over a labeled manifest."""
    feature_dir = Path(feature_dir)
    feats = _load_utterance_features(
        [(rec.utt_id, feature_dir) for rec in manifest.records], cmvn,
        ckpt.config.receptive_field)
    losses = []
    for rec in manifest.records:
        label = ckpt.label_map.get(rec.speaker_id)
        if label is None:
            raise TrainerError(
                f"speaker {rec.speaker_id} absent from the checkpoint label map"
            )
        losses.append(embedder.loss_only(feats[rec.utt_id], label,
                                         ckpt.params, ckpt.config))
    return float(np.mean(losses))


def incremental_train(stage1: StagePlan, stage2: StagePlan,
                      model_config: embedder.EmbedderConfig,
                      out_dir: str | Path, jobs: int = 1,
                      ) -> tuple[Checkpoint, Checkpoint, LossCurve, LossCurve]:
    """Stage 1 on clean data, then stage 2 continuing on augmented data.

    The stage 2 manifest label must be the stage 1 label with an
    ``-augmented`` suffix so the corpora stay paired.  Checkpoints and loss
    curves for both stages are written under ``out_dir``.
    """
    if stage1.stage_id != 1 or stage2.stage_id != 2:
        raise TrainerError(
            f"expected stage ids 1 and 2, got {stage1.stage_id} and {stage2.stage_id}"
        )
    label1 = load_manifest(stage1.manifest_path).label
    label2 = load_manifest(stage2.manifest_path).label
    if label2 != label1 + "-augmented":
        raise TrainerError(
            f"stage 2 manifest label {label2!r} is not {label1 + '-augmented'!r}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt1, curve1 = train_stage(stage1, model_config=model_config, jobs=jobs)
    save_checkpoint(ckpt1, out_dir / "stage1.spwc")
    ckpt2, curve2 = train_stage(stage2, init=ckpt1, jobs=jobs)
    save_checkpoint(ckpt2, out_dir / "stage2.spwc")
    return ckpt1, ckpt2, curve1, curve2
