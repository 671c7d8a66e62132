"""Attention-ratio and stream-scale instrumentation."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, UsageError
from .model import AttentionTrace, DualStreamModel, TrainingBatch, forward


def polarization_attention_ratio(trace: AttentionTrace) -> np.ndarray:
    """Per-layer share of answer-query attention mass landing on polarization
    tokens, out of the mass landing on all visual tokens."""
    labels = trace.stream_labels
    if len(labels) != trace.n_visual:
        raise DataError(f"{len(labels)} stream labels for {trace.n_visual} visual tokens")
    if "rgb" not in labels:
        raise UsageError("attention ratio needs a dual-stream (stage2) trace")
    polar_cols = np.array([i for i, lab in enumerate(labels) if lab == "polar"], dtype=np.intp)
    ratios = []
    for layer_weights in trace.weights:
        visual_mass = float(layer_weights[:, :, : trace.n_visual].sum())
        if visual_mass <= 0.0:
            raise DataError("degenerate trace: zero attention mass on visual tokens")
        polar_mass = float(layer_weights[:, :, polar_cols].sum())
        ratios.append(polar_mass / visual_mass)
    return np.asarray(ratios, dtype=np.float64)


def uniform_trace(n_rgb: int, n_polar: int, layers: int = 1, heads: int = 1, queries: int = 1) -> AttentionTrace:
    """Handcrafted trace with uniform rows over the visual keys."""
    n_visual = n_rgb + n_polar
    row = np.full((heads, queries, n_visual), 1.0 / n_visual)
    return AttentionTrace(
        weights=[row.copy() for _ in range(layers)],
        stream_labels=["rgb"] * n_rgb + ["polar"] * n_polar,
        n_visual=n_visual,
    )


def stream_scale_report(model: DualStreamModel, batch: TrainingBatch) -> dict:
    """Token RMS of the projected polarization stream before and after its
    normalization layer, plus the rgb token RMS for comparison.

    The post-normalization RMS equals the learned scalar gain for every
    non-degenerate token, independent of the projector input scale.
    """
    if model.stage != "stage2":
        raise UsageError("stream scale report compares both streams; run in stage2")
    result = forward(model, batch, collect_trace=False)
    stats = result.stream_stats
    return {
        "polar_pre_norm_rms": stats["polar_pre_norm_rms"].tolist(),
        "polar_post_norm_rms": stats["polar_post_norm_rms"].tolist(),
        "rgb_token_rms": stats["rgb_token_rms"].tolist(),
        "norm_gain": stats["norm_gain"],
        "degenerate_polar_tokens": stats["degenerate_polar_tokens"],
    }
