from .checkpoint import load_checkpoint, save_checkpoint
from .config import PARAMETER_GROUPS, STAGE_TRAINABLE, ModelConfig, stage_mask
from .data import load_dataset, make_toy_batch, write_toy_dataset
from .metrics import polarization_attention_ratio, stream_scale_report, uniform_trace
from .model import AttentionTrace, DualStreamModel, ForwardResult, TrainingBatch, forward, loss
from .train import (
    OVERFIT_LR,
    OVERFIT_STEPS,
    AdamOptimizer,
    compute_gradients,
    gradient_check,
    make_overfit_fixture,
    run_overfit_fixture,
    run_training,
    train_step,
)

__all__ = [
    "AdamOptimizer",
    "AttentionTrace",
    "DualStreamModel",
    "ForwardResult",
    "ModelConfig",
    "OVERFIT_LR",
    "OVERFIT_STEPS",
    "PARAMETER_GROUPS",
    "STAGE_TRAINABLE",
    "TrainingBatch",
    "compute_gradients",
    "forward",
    "gradient_check",
    "load_checkpoint",
    "load_dataset",
    "loss",
    "make_overfit_fixture",
    "make_toy_batch",
    "polarization_attention_ratio",
    "run_overfit_fixture",
    "run_training",
    "save_checkpoint",
    "stage_mask",
    "stream_scale_report",
    "train_step",
    "uniform_trace",
    "write_toy_dataset",
]
