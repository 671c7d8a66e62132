"""Training-data plumbing: toy batches, the line-delimited dataset format,
and the shipped toy vocabulary."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError
from ..formats import read_float_map, read_jsonl, write_float_map, write_jsonl
from .config import ModelConfig
from .model import TrainingBatch

DATASET_SCHEMA = "polarkit.fusion-data/v1"


@lru_cache(maxsize=1)
def toy_vocab() -> dict[str, int]:
    payload = resources.files("polarkit.data").joinpath("toy_vocab.json").read_text("utf-8")
    return {str(k): int(v) for k, v in json.loads(payload)["tokens"].items()}


def encode_text(text: str, vocab_size: int) -> list[int]:
    """Map text to toy token ids; unknown characters fall back to id 1."""
    vocab = toy_vocab()
    ids = [vocab.get(ch, 1) for ch in text.lower()]
    if any(i >= vocab_size for i in ids):
        raise DataError(f"toy vocabulary exceeds configured vocab size {vocab_size}")
    return ids


def make_toy_batch(config: ModelConfig, rng, stage: str, answer_len: int = 4) -> TrainingBatch:
    side = config.image_side
    polar = rng.uniform(0.0, 1.0, size=(config.channels, side, side))
    rgb = rng.uniform(0.0, 1.0, size=(config.channels, side, side)) if stage == "stage2" else None
    instruction = rng.integers(2, config.vocab_size, size=4)
    target = rng.integers(2, config.vocab_size, size=answer_len)
    return TrainingBatch(polar=polar, rgb=rgb, instruction_ids=instruction, target_ids=target)


def write_toy_dataset(
    out_dir, config: ModelConfig, n_stage1: int = 4, n_stage2: int = 4, seed: int = 0
) -> Path:
    """Materialize a toy dataset: float-map files plus a data.jsonl index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    channel_names = ["c1", "c2", "c3"][: config.channels]
    records = []
    for stage, count in (("stage1", n_stage1), ("stage2", n_stage2)):
        for k in range(count):
            batch = make_toy_batch(config, rng, stage)
            polar_path = out_dir / f"{stage}_{k:03d}_polar.pfm"
            write_float_map(polar_path, batch.polar, channel_names)
            record = {
                "schema": DATASET_SCHEMA,
                "stage": 1 if stage == "stage1" else 2,
                "polar_map": polar_path.name,
                "rgb_map": None,
                "instruction_ids": batch.instruction_ids.tolist(),
                "target_ids": batch.target_ids.tolist(),
            }
            if batch.rgb is not None:
                rgb_path = out_dir / f"{stage}_{k:03d}_rgb.pfm"
                write_float_map(rgb_path, batch.rgb, channel_names)
                record["rgb_map"] = rgb_path.name
            records.append(record)
    index = out_dir / "data.jsonl"
    write_jsonl(index, records)
    return index


def load_dataset(index_path) -> dict[str, list[TrainingBatch]]:
    """Load a data.jsonl index into per-stage batch lists."""
    index_path = Path(index_path)
    base = index_path.parent
    batches: dict[str, list[TrainingBatch]] = {"stage1": [], "stage2": []}
    for lineno, record in enumerate(read_jsonl(index_path), start=1):
        if record.get("schema") != DATASET_SCHEMA:
            raise FormatError(f"{index_path}:{lineno}: unexpected schema {record.get('schema')!r}")
        stage = f"stage{int(record['stage'])}"
        if stage not in batches:
            raise FormatError(f"{index_path}:{lineno}: bad stage {record['stage']!r}")
        polar, _, _ = read_float_map(base / record["polar_map"])
        rgb = None
        if record.get("rgb_map"):
            rgb, _, _ = read_float_map(base / record["rgb_map"])
        if stage == "stage2" and rgb is None:
            raise FormatError(f"{index_path}:{lineno}: stage2 sample lacks an rgb map")
        batches[stage].append(
            TrainingBatch(
                polar=polar,
                rgb=rgb,
                instruction_ids=np.asarray(record["instruction_ids"], dtype=np.intp),
                target_ids=np.asarray(record["target_ids"], dtype=np.intp),
            )
        )
    return batches
