"""Simulator configuration, parameter groups, and stage trainability masks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..errors import DataError, UsageError

STAGES = ("stage1", "stage2")

PARAMETER_GROUPS = (
    "rgb_encoder",
    "rgb_projector",
    "polar_patch_embed",
    "polar_encoder_base",
    "polar_encoder_lora",
    "polar_projector_layer1",
    "polar_projector_layer2",
    "polar_projector_norm",
    "token_embed",
    "decoder_base",
    "decoder_lora",
    "lm_head",
)

# Stage 1 aligns the polarization input path: patch embedding plus the whole
# projector train, everything else is frozen.  Stage 2 adapts attention via
# low-rank pairs plus the projector's first layer; the patch embedding, the
# projector's second layer, and its output norm freeze.
STAGE_TRAINABLE = {
    "stage1": frozenset(
        {
            "polar_patch_embed",
            "polar_projector_layer1",
            "polar_projector_layer2",
            "polar_projector_norm",
        }
    ),
    "stage2": frozenset({"decoder_lora", "polar_encoder_lora", "polar_projector_layer1"}),
}


@dataclass
class ModelConfig:
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    vocab_size: int = 64
    visual_tokens_per_stream: int = 16
    encoder_dim: int = 16
    encoder_layers: int = 1
    encoder_heads: int = 2
    patch_size: int = 2
    channels: int = 3
    projector_hidden: int = 32
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_dropout: float = 0.0
    mlp_ratio: int = 4
    max_seq_len: int = 128
    stage: str = "stage1"
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise DataError(
                f"embed_dim {self.embed_dim} must divide evenly into {self.num_heads} heads"
            )
        if self.encoder_dim % self.encoder_heads:
            raise DataError(
                f"encoder_dim {self.encoder_dim} must divide evenly into {self.encoder_heads} heads"
            )
        if self.lora_rank < 1:
            raise DataError(f"lora_rank must be >= 1, got {self.lora_rank}")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise DataError(f"lora_dropout must be in [0, 1), got {self.lora_dropout}")
        if self.stage not in STAGES:
            raise UsageError(f"stage must be one of {STAGES}, got {self.stage!r}")
        grid = math.isqrt(self.visual_tokens_per_stream)
        if grid * grid != self.visual_tokens_per_stream:
            raise DataError(
                f"visual_tokens_per_stream must be a perfect square, got {self.visual_tokens_per_stream}"
            )

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.visual_tokens_per_stream)

    @property
    def image_side(self) -> int:
        return self.grid_side * self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank

    def as_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: dict) -> "ModelConfig":
        known = {f for f in ModelConfig.__dataclass_fields__}
        return ModelConfig(**{k: v for k, v in payload.items() if k in known})


def stage_mask(stage: str) -> dict[str, bool]:
    """Per-parameter-group trainable flags for a stage."""
    if stage not in STAGES:
        raise UsageError(f"unknown stage {stage!r}")
    trainable = STAGE_TRAINABLE[stage]
    return {group: group in trainable for group in PARAMETER_GROUPS}
