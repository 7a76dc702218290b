"""Declarative run configuration: YAML schema, validation, and echo."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from . import dsp
from .embedder import EmbedderConfig
from .feature_store import FbankConfig
from .sr_augment import SrPolicy


class ConfigError(ValueError):
    """Raised when a run configuration fails validation."""


_SCHEMA: dict[str, Any] = {
    "run_dir": str,
    "jobs": 1,
    "stft": {
        "n_fft": 1024,
        "hop": 256,
        "win_length": 1024,
        "center": True,
    },
    "augment": {
        "ratio_min": 0.85,
        "ratio_max": 1.15,
        "pad_mode": "repeat_edge",
        "n_mels": 80,
        "fmin": 0.0,
        "fmax": 8000.0,
        "griffin_lim_iters": 60,
        "seed": 101,
    },
    "features": {
        "n_mels": 40,
        "fmin": 0.0,
        "fmax": 8000.0,
        "log_floor": 1e-10,
        "source": "fbank",          # fbank | external
        "external_dir": str,
        "expected_dim": 1024,
        "cmvn": "global",           # global | utterance | none
    },
    "embedder": {
        "channels": 64,
        "tdnn_layers": [[5, 1], [3, 2], [3, 3]],
        "attn_hidden": 32,
        "embedding_dim": 128,
        "aam_scale": 20.0,
        "aam_margin": 0.2,
    },
    "stage1": {
        "manifest": str,
        "epochs": 10,
        "batch_size": 32,
        "chunk_frames": 200,
        "lr": 1e-3,
        "seed": 7,
        "val_fraction": 0.05,
    },
    "stage2": {
        "manifest": str,
        "epochs": 2,
        "batch_size": 32,
        "chunk_frames": 200,
        "lr": 1e-3,
        "seed": 8,
        "val_fraction": 0.05,
        "mix_clean": 0.0,
    },
    "eval": {
        "manifest": str,
        "checkpoint": str,
        "system": "specwav-attack",
        "trials": [{"name": str, "dataset": str, "gender": str, "path": str}],
    },
}

# schema leaves that are types mark required-when-used path fields
_PATH_KEYS = {"run_dir", "external_dir", "manifest", "checkpoint", "path"}


def _validate_section(user: Any, schema: Any, path: str) -> Any:
    if isinstance(schema, dict):
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path or 'config'} must be a mapping")
        out = {}
        for key, value in user.items():
            if key not in schema:
                where = f" (in {path})" if path else ""
                raise ConfigError(f"unknown key: {key}{where}")
        for key, sub_schema in schema.items():
            child_path = f"{path}.{key}" if path else key
            if key == "trials":
                out[key] = _validate_trials(user.get(key), child_path)
            elif isinstance(sub_schema, dict):
                out[key] = _validate_section(user.get(key), sub_schema, child_path)
            else:
                out[key] = _validate_leaf(user.get(key, _MISSING), sub_schema,
                                          child_path)
        return out
    raise ConfigError(f"bad schema node at {path}")


_MISSING = object()


def _validate_leaf(value: Any, default: Any, path: str) -> Any:
    if value is _MISSING or value is None:
        return None if default is str or isinstance(default, type) else default
    if default is str or isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):  # tdnn_layers: list of [kernel, dilation]
        if (not isinstance(value, list)
                or not all(isinstance(item, list) and len(item) == 2
                           and all(isinstance(x, int) and not isinstance(x, bool)
                                   for x in item)
                           for item in value)):
            raise ConfigError(
                f"{path} must be a list of [kernel, dilation] integer pairs, "
                f"got {value!r}"
            )
        return [list(item) for item in value]
    raise ConfigError(f"bad schema default at {path}")


def _validate_trials(value: Any, path: str) -> list[dict[str, str]]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ConfigError(f"{path} must be a list of trial entries")
    entries = []
    seen = set()
    for i, entry in enumerate(value):
        entry_path = f"{path}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{entry_path} must be a mapping")
        for key in entry:
            if key not in ("name", "dataset", "gender", "path"):
                raise ConfigError(f"unknown key: {key} (in {entry_path})")
        for key in ("name", "dataset", "gender", "path"):
            if key not in entry or not isinstance(entry[key], str):
                raise ConfigError(f"{entry_path}.{key} must be a string")
        if entry["gender"] not in ("female", "male"):
            raise ConfigError(
                f"{entry_path}.gender must be 'female' or 'male', "
                f"got {entry['gender']!r}"
            )
        if entry["name"] in seen:
            raise ConfigError(f"duplicate trial entry name {entry['name']!r}")
        seen.add(entry["name"])
        entries.append({k: entry[k] for k in ("name", "dataset", "gender", "path")})
    return entries


class RunConfig:
    """Validated, defaults-merged run configuration."""

    def __init__(self, data: dict[str, Any], base_dir: Path):
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if raw is None:
            raw = {}
        data = _validate_section(raw, _SCHEMA, "")
        cfg = cls(data, path.parent.resolve())
        if data["features"]["source"] not in ("fbank", "external"):
            raise ConfigError(
                f"features.source must be 'fbank' or 'external', "
                f"got {data['features']['source']!r}"
            )
        if data["features"]["cmvn"] not in ("global", "utterance", "none"):
            raise ConfigError(
                f"features.cmvn must be 'global', 'utterance', or 'none', "
                f"got {data['features']['cmvn']!r}"
            )
        return cfg

    def _resolve(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, *keys: str) -> Path:
        node: Any = self.data
        for key in keys:
            node = node[key]
        if node is None:
            raise ConfigError(f"missing required path: {'.'.join(keys)}")
        return self._resolve(node)

    def optional_path(self, *keys: str) -> Path | None:
        node: Any = self.data
        for key in keys:
            node = node[key]
        return self._resolve(node)

    @property
    def run_dir(self) -> Path:
        return self.require_path("run_dir")

    @property
    def jobs(self) -> int:
        return self.data["jobs"]

    def stft_params(self) -> dsp.StftParams:
        s = self.data["stft"]
        return dsp.StftParams(n_fft=s["n_fft"], hop=s["hop"],
                              win_length=s["win_length"], center=s["center"])

    def sr_policy(self) -> SrPolicy:
        a = self.data["augment"]
        return SrPolicy(ratio_min=a["ratio_min"], ratio_max=a["ratio_max"],
                        pad_mode=a["pad_mode"], n_mels=a["n_mels"],
                        fmin=a["fmin"], fmax=a["fmax"],
                        griffin_lim_iters=a["griffin_lim_iters"])

    def fbank_config(self) -> FbankConfig:
        f = self.data["features"]
        return FbankConfig(stft=self.stft_params(), n_mels=f["n_mels"],
                           fmin=f["fmin"], fmax=f["fmax"],
                           log_floor=f["log_floor"])

    def embedder_template(self) -> EmbedderConfig:
        e = self.data["embedder"]
        # input_dim and n_classes are placeholders; the trainer fills them
        # in from the data
        return EmbedderConfig(
            input_dim=1, n_classes=1, channels=e["channels"],
            tdnn_layers=tuple(tuple(layer) for layer in e["tdnn_layers"]),
            attn_hidden=e["attn_hidden"], embedding_dim=e["embedding_dim"],
            aam_scale=e["aam_scale"], aam_margin=e["aam_margin"])

    def echo(self, run_dir: Path) -> Path:
        run_dir.mkdir(parents=True, exist_ok=True)
        out = run_dir / "config.echo"
        out.write_text(yaml.safe_dump(self.data, sort_keys=True,
                                      default_flow_style=False),
                       encoding="utf-8")
        return out


def section_keys(section: str) -> list[str]:
    """Config keys under a top-level section, for --help texts."""
    node = _SCHEMA[section]
    if not isinstance(node, dict):
        return [section]
    return [f"{section}.{key}" for key in node]
