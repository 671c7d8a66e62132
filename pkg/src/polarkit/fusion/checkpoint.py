"""Versioned checkpoint blobs: npz payload plus an embedded JSON manifest."""

from __future__ import annotations

import io
import json

import numpy as np

from ..errors import FormatError
from ..formats import atomic_write_bytes
from .config import ModelConfig
from .model import DualStreamModel

CHECKPOINT_FORMAT = "polarkit.checkpoint/v1"


def save_checkpoint(path, model: DualStreamModel, step: int = 0, extra: dict | None = None) -> None:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.as_dict(),
        "stage": model.stage,
        "seed": model.config.seed,
        "step": step,
        "groups": model.groups,
        "extra": extra or {},
    }
    arrays = {f"param/{name}": value for name, value in model.params.items()}
    arrays["manifest"] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    atomic_write_bytes(path, buffer.getvalue())


def load_checkpoint(path) -> tuple[DualStreamModel, dict]:
    try:
        with np.load(path) as payload:
            if "manifest" not in payload:
                raise FormatError(f"{path}: not a checkpoint (no manifest)")
            manifest = json.loads(bytes(payload["manifest"]).decode("utf-8"))
            if manifest.get("format") != CHECKPOINT_FORMAT:
                raise FormatError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
            params = {
                key[len("param/") :]: payload[key] for key in payload.files if key.startswith("param/")
            }
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint: {exc}") from exc

    model = DualStreamModel(ModelConfig.from_dict(manifest["config"]))
    model.set_stage(manifest["stage"])
    expected = set(model.params)
    if set(params) != expected:
        missing = sorted(expected - set(params))[:4]
        surplus = sorted(set(params) - expected)[:4]
        raise FormatError(f"{path}: parameter table mismatch (missing {missing}, surplus {surplus})")
    for name, value in params.items():
        if value.shape != model.params[name].shape:
            raise FormatError(
                f"{path}: parameter {name} has shape {value.shape}, expected {model.params[name].shape}"
            )
        model.params[name] = value.astype(np.float64)
    return model, manifest
