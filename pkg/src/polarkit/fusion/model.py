"""Desk-scale dual-stream decoder-only transformer.

Two toy patch-embedding encoders (rgb and polarization) feed projectors into
a causal decoder.  The polarization projector ends in a per-token RMS norm
with a single learned scalar gain, so its output scale is input-invariant by
construction.  Visual tokens are fused by sequence concatenation: every
query may attend to every visual key, text is causal.

Low-rank adapter pairs (A, B) ride on the attention projections of the
decoder (q/k/v/o) and of the polarization encoder (q/k/v); outputs use
W + (alpha/rank) * B @ A with B zero-initialized, so a fresh adapter is an
exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, StructuralError, UsageError
from . import autodiff as ad
from .autodiff import Tensor
from .config import PARAMETER_GROUPS, STAGES, ModelConfig, stage_mask

_NEG_INF = -1e30


@dataclass
class TrainingBatch:
    """One training example: patch grids, instruction ids, answer ids."""

    polar: np.ndarray  # (channels, side, side)
    instruction_ids: np.ndarray
    target_ids: np.ndarray
    rgb: np.ndarray | None = None  # stage-2 only
    loss_mask: np.ndarray | None = None  # over text positions; built if absent

    def __post_init__(self):
        self.polar = np.asarray(self.polar, dtype=np.float64)
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.instruction_ids = np.asarray(self.instruction_ids, dtype=np.intp)
        self.target_ids = np.asarray(self.target_ids, dtype=np.intp)
        if self.target_ids.size < 1:
            raise DataError("target sequence must contain at least one token")
        if self.instruction_ids.size < 1:
            raise DataError("instruction sequence must contain at least one token")


@dataclass
class AttentionTrace:
    """Answer-query attention rows, per decoder layer and head.

    weights[l] has shape (heads, n_answer_queries, n_keys); keys 0..n_visual
    are the visual tokens labelled by stream_labels.
    """

    weights: list[np.ndarray]
    stream_labels: list[str]
    n_visual: int


@dataclass
class ForwardResult:
    logits: Tensor  # (n_text, vocab)
    trace: AttentionTrace
    stream_stats: dict
    n_visual: int
    n_text: int
    # Parameter-name -> Tensor map from this forward; gradients land here
    # after backward() on the loss.
    param_tensors: dict = field(default_factory=dict)


class DualStreamModel:
    """Parameter store plus the forward computation."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.stage = config.stage
        self.params: dict[str, np.ndarray] = {}
        self.groups: dict[str, str] = {}
        self._init_params(np.random.default_rng(config.seed))

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, group: str, value: np.ndarray) -> None:
        if name in self.params:
            raise DataError(f"duplicate parameter {name}")
        if group not in PARAMETER_GROUPS:
            raise DataError(f"unknown parameter group {group}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.groups[name] = group

    def _init_params(self, rng) -> None:
        cfg = self.config

        def w(*shape):
            return rng.normal(0.0, 0.02, size=shape)

        for stream in ("rgb", "polar"):
            embed_group = "rgb_encoder" if stream == "rgb" else "polar_patch_embed"
            base_group = "rgb_encoder" if stream == "rgb" else "polar_encoder_base"
            self._add(f"{stream}_patch_w", embed_group, w(cfg.patch_dim, cfg.encoder_dim))
            self._add(f"{stream}_patch_b", embed_group, np.zeros(cfg.encoder_dim))
            self._add(f"{stream}_pos", embed_group, w(cfg.visual_tokens_per_stream, cfg.encoder_dim))
            self._add(f"{stream}_embed_norm_g", embed_group, np.ones(cfg.encoder_dim))
            for layer in range(cfg.encoder_layers):
                p = f"{stream}_enc{layer}"
                self._add(f"{p}_norm1_g", base_group, np.ones(cfg.encoder_dim))
                for proj in ("q", "k", "v", "o"):
                    self._add(f"{p}_attn_{proj}_w", base_group, w(cfg.encoder_dim, cfg.encoder_dim))
                self._add(f"{p}_norm2_g", base_group, np.ones(cfg.encoder_dim))
                hidden = cfg.mlp_ratio * cfg.encoder_dim
                self._add(f"{p}_mlp_w1", base_group, w(cfg.encoder_dim, hidden))
                self._add(f"{p}_mlp_b1", base_group, np.zeros(hidden))
                self._add(f"{p}_mlp_w2", base_group, w(hidden, cfg.encoder_dim))
                self._add(f"{p}_mlp_b2", base_group, np.zeros(cfg.encoder_dim))
                if stream == "polar":
                    for proj in ("q", "k", "v"):
                        self._add(
                            f"{p}_attn_{proj}_lora_A", "polar_encoder_lora", w(cfg.lora_rank, cfg.encoder_dim)
                        )
                        self._add(
                            f"{p}_attn_{proj}_lora_B",
                            "polar_encoder_lora",
                            np.zeros((cfg.encoder_dim, cfg.lora_rank)),
                        )

        self._add("rgb_proj_w1", "rgb_projector", w(cfg.encoder_dim, cfg.projector_hidden))
        self._add("rgb_proj_b1", "rgb_projector", np.zeros(cfg.projector_hidden))
        self._add("rgb_proj_w2", "rgb_projector", w(cfg.projector_hidden, cfg.embed_dim))
        self._add("rgb_proj_b2", "rgb_projector", np.zeros(cfg.embed_dim))

        self._add("pol_proj_w1", "polar_projector_layer1", w(cfg.encoder_dim, cfg.projector_hidden))
        self._add("pol_proj_b1", "polar_projector_layer1", np.zeros(cfg.projector_hidden))
        self._add("pol_proj_w2", "polar_projector_layer2", w(cfg.projector_hidden, cfg.embed_dim))
        self._add("pol_proj_b2", "polar_projector_layer2", np.zeros(cfg.embed_dim))
        self._add("pol_proj_norm_g", "polar_projector_norm", np.asarray(1.0))

        self._add("tok_embed", "token_embed", w(cfg.vocab_size, cfg.embed_dim))
        self._add("dec_pos", "decoder_base", w(cfg.max_seq_len, cfg.embed_dim))
        for layer in range(cfg.num_layers):
            p = f"dec{layer}"
            self._add(f"{p}_norm1_g", "decoder_base", np.ones(cfg.embed_dim))
            for proj in ("q", "k", "v", "o"):
                self._add(f"{p}_attn_{proj}_w", "decoder_base", w(cfg.embed_dim, cfg.embed_dim))
                self._add(f"{p}_attn_{proj}_lora_A", "decoder_lora", w(cfg.lora_rank, cfg.embed_dim))
                self._add(
                    f"{p}_attn_{proj}_lora_B", "decoder_lora", np.zeros((cfg.embed_dim, cfg.lora_rank))
                )
            self._add(f"{p}_norm2_g", "decoder_base", np.ones(cfg.embed_dim))
            hidden = cfg.mlp_ratio * cfg.embed_dim
            self._add(f"{p}_mlp_w1", "decoder_base", w(cfg.embed_dim, hidden))
            self._add(f"{p}_mlp_b1", "decoder_base", np.zeros(hidden))
            self._add(f"{p}_mlp_w2", "decoder_base", w(hidden, cfg.embed_dim))
            self._add(f"{p}_mlp_b2", "decoder_base", np.zeros(cfg.embed_dim))
        self._add("dec_final_norm_g", "decoder_base", np.ones(cfg.embed_dim))
        # The head is frozen in both stages; at the usual 0.02 init its logit
        # range would cap the reachable NLL, so it gets unit-scale columns.
        self._add("lm_head_w", "lm_head", rng.normal(0.0, 1.0, size=(cfg.embed_dim, cfg.vocab_size)))

    def set_stage(self, stage: str) -> None:
        if stage not in STAGES:
            raise UsageError(f"unknown stage {stage!r}")
        self.stage = stage

    def trainable_mask(self) -> dict[str, bool]:
        return stage_mask(self.stage)

    def group_params(self, group: str) -> list[str]:
        return [name for name, g in self.groups.items() if g == group]

    def copy(self) -> "DualStreamModel":
        clone = DualStreamModel.__new__(DualStreamModel)
        clone.config = self.config
        clone.stage = self.stage
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.groups = dict(self.groups)
        return clone


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(C, S, S) image -> (n_patches, C*patch*patch) rows in raster order."""
    c, h, w = image.shape
    if h % patch or w % patch:
        raise StructuralError(f"image side {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    return (
        image.reshape(c, gh, patch, gw, patch)
        .transpose(1, 3, 0, 2, 4)
        .reshape(gh * gw, c * patch * patch)
    )


def _rms_norm(x: Tensor, gain: Tensor) -> Tensor:
    """Per-token RMS normalization: x / rms(x) * gain.

    No epsilon bias: an all-zero token divides by 1 instead (it stays zero
    and is reported as degenerate upstream), so the post-norm RMS of every
    live token equals |gain| to machine precision.
    """
    ms = ad.mean(ad.mul(x, x), axis=-1, keepdims=True)
    nonzero = (ms.data != 0.0).astype(np.float64)
    ms_safe = ad.add(ad.mul(ms, Tensor(nonzero)), Tensor(1.0 - nonzero))
    inv = ad.div(Tensor(1.0), ad.sqrt(ms_safe))
    return ad.mul(ad.mul(x, inv), gain)


def _linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    return ad.add(out, b) if b is not None else out


def _lora_linear(
    x: Tensor, w: Tensor, a: Tensor | None, b: Tensor | None, scale: float, dropout_keep=None
) -> Tensor:
    out = ad.matmul(x, w)
    if a is None or b is None:
        return out
    adapter_in = ad.mul(x, Tensor(dropout_keep)) if dropout_keep is not None else x
    delta = ad.matmul(ad.matmul(adapter_in, ad.transpose(a)), ad.transpose(b))
    return ad.add(out, ad.mul(delta, scale))


def _attention(
    x: Tensor,
    prefix: str,
    p: dict[str, Tensor],
    num_heads: int,
    mask_bias: np.ndarray | None,
    lora: dict | None,
    collect: list | None,
) -> Tensor:
    dim = x.data.shape[1]
    head_dim = dim // num_heads
    scale = 1.0 / np.sqrt(head_dim)

    def proj(name):
        if lora and name in lora:
            a, b, lora_scale, keep = lora[name]
            return _lora_linear(x, p[f"{prefix}_attn_{name}_w"], a, b, lora_scale, keep)
        return _linear(x, p[f"{prefix}_attn_{name}_w"])

    q, k, v = proj("q"), proj("k"), proj("v")
    head_outputs = []
    head_probs = []
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), scale)
        if mask_bias is not None:
            scores = ad.add(scores, Tensor(mask_bias))
        probs = ad.softmax_rows(scores)
        if collect is not None:
            head_probs.append(probs.data.copy())
        head_outputs.append(ad.matmul(probs, vh))
    if collect is not None:
        collect.append(np.stack(head_probs))
    concat = head_outputs[0] if num_heads == 1 else ad.concat_cols(head_outputs)
    if lora and "o" in lora:
        a, b, lora_scale, keep = lora["o"]
        return _lora_linear(concat, p[f"{prefix}_attn_o_w"], a, b, lora_scale, keep)
    return _linear(concat, p[f"{prefix}_attn_o_w"])


def _mlp(x: Tensor, prefix: str, p: dict[str, Tensor]) -> Tensor:
    hidden = ad.tanh(_linear(x, p[f"{prefix}_mlp_w1"], p[f"{prefix}_mlp_b1"]))
    return _linear(hidden, p[f"{prefix}_mlp_w2"], p[f"{prefix}_mlp_b2"])


def _block(
    x: Tensor,
    prefix: str,
    p: dict[str, Tensor],
    num_heads: int,
    mask_bias: np.ndarray | None,
    lora: dict | None,
    collect: list | None,
) -> Tensor:
    attn_out = _attention(
        _rms_norm(x, p[f"{prefix}_norm1_g"]), prefix, p, num_heads, mask_bias, lora, collect
    )
    x = ad.add(x, attn_out)
    mlp_out = _mlp(_rms_norm(x, p[f"{prefix}_norm2_g"]), prefix, p)
    return ad.add(x, mlp_out)


def _encode_stream(
    stream: str,
    image: np.ndarray,
    p: dict[str, Tensor],
    cfg: ModelConfig,
    use_adapters: bool,
    dropout_keep,
) -> Tensor:
    patches = patchify(image, cfg.patch_size)
    if patches.shape[0] != cfg.visual_tokens_per_stream:
        raise StructuralError(
            f"{stream} input yields {patches.shape[0]} tokens, expected {cfg.visual_tokens_per_stream}"
        )
    x = ad.add(ad.add(ad.matmul(Tensor(patches), p[f"{stream}_patch_w"]), p[f"{stream}_patch_b"]), p[f"{stream}_pos"])
    x = _rms_norm(x, p[f"{stream}_embed_norm_g"])
    for layer in range(cfg.encoder_layers):
        prefix = f"{stream}_enc{layer}"
        lora = None
        if stream == "polar" and use_adapters:
            lora = {
                name: (
                    p[f"{prefix}_attn_{name}_lora_A"],
                    p[f"{prefix}_attn_{name}_lora_B"],
                    cfg.lora_scale,
                    dropout_keep,
                )
                for name in ("q", "k", "v")
            }
        x = _block(x, prefix, p, cfg.encoder_heads, None, lora, None)
    return x


def _prefix_causal_bias(n_visual: int, total: int) -> np.ndarray:
    """Key j is visible to query i iff j is a visual token or j <= i."""
    bias = np.full((total, total), _NEG_INF)
    bias[:, :n_visual] = 0.0
    rows, cols = np.tril_indices(total)
    bias[rows, cols] = 0.0
    return bias


def _token_rms(values: np.ndarray) -> np.ndarray:
    return np.sqrt((values * values).mean(axis=-1))


def forward(
    model: DualStreamModel,
    batch: TrainingBatch,
    use_adapters: bool = True,
    collect_trace: bool = True,
    dropout_rng=None,
) -> ForwardResult:
    """Run the dual-stream decoder on one batch.

    Stage 1 bypasses the RGB branch entirely: batches carrying rgb input are
    a usage error, as are stage-2 batches without it.
    """
    cfg = model.config
    if model.stage == "stage1" and batch.rgb is not None:
        raise UsageError("stage1 bypasses the rgb branch; batch must not carry rgb input")
    if model.stage == "stage2" and batch.rgb is None:
        raise UsageError("stage2 fuses both streams; batch must carry rgb input")

    p = {name: Tensor(arr) for name, arr in model.params.items()}

    keep_enc = keep_dec = None
    if cfg.lora_dropout > 0.0:
        if dropout_rng is None:
            raise UsageError("lora_dropout > 0 requires a dropout_rng for determinism")

        def _keep(dim):
            mask = dropout_rng.uniform(size=(1, dim)) >= cfg.lora_dropout
            return mask.astype(np.float64) / (1.0 - cfg.lora_dropout)

        keep_enc = _keep(cfg.encoder_dim)
        keep_dec = _keep(cfg.embed_dim)

    polar_tokens = _encode_stream("polar", batch.polar, p, cfg, use_adapters, keep_enc)
    h1 = ad.tanh(_linear(polar_tokens, p["pol_proj_w1"], p["pol_proj_b1"]))
    pre_norm = _linear(h1, p["pol_proj_w2"], p["pol_proj_b2"])
    h_pol = _rms_norm(pre_norm, p["pol_proj_norm_g"])

    stream_stats = {
        "polar_pre_norm_rms": _token_rms(pre_norm.data),
        "polar_post_norm_rms": _token_rms(h_pol.data),
        "norm_gain": float(abs(model.params["pol_proj_norm_g"])),
        "degenerate_polar_tokens": int((_token_rms(pre_norm.data) < 1e-9).sum()),
        "rgb_token_rms": None,
    }

    if model.stage == "stage2":
        rgb_tokens = _encode_stream("rgb", batch.rgb, p, cfg, use_adapters=False, dropout_keep=None)
        g1 = ad.tanh(_linear(rgb_tokens, p["rgb_proj_w1"], p["rgb_proj_b1"]))
        h_rgb = _linear(g1, p["rgb_proj_w2"], p["rgb_proj_b2"])
        visual = ad.concat_rows([h_rgb, h_pol])
        stream_labels = ["rgb"] * cfg.visual_tokens_per_stream + ["polar"] * cfg.visual_tokens_per_stream
        stream_stats["rgb_token_rms"] = _token_rms(h_rgb.data)
    else:
        visual = h_pol
        stream_labels = ["polar"] * cfg.visual_tokens_per_stream

    n_visual = visual.data.shape[0]
    text_ids = np.concatenate([batch.instruction_ids, batch.target_ids])
    if text_ids.max() >= cfg.vocab_size:
        raise DataError(f"token id {int(text_ids.max())} outside vocab of {cfg.vocab_size}")
    n_text = text_ids.size
    total = n_visual + n_text
    if total > cfg.max_seq_len:
        raise StructuralError(f"sequence length {total} exceeds max_seq_len {cfg.max_seq_len}")

    tokens = ad.gather_rows(p["tok_embed"], text_ids)
    seq = ad.concat_rows([visual, tokens])
    seq = ad.add(seq, ad.slice_rows(p["dec_pos"], 0, total))

    bias = _prefix_causal_bias(n_visual, total)
    collected: list[np.ndarray] = []
    for layer in range(cfg.num_layers):
        prefix = f"dec{layer}"
        lora = None
        if use_adapters:
            lora = {
                name: (
                    p[f"{prefix}_attn_{name}_lora_A"],
                    p[f"{prefix}_attn_{name}_lora_B"],
                    cfg.lora_scale,
                    keep_dec,
                )
                for name in ("q", "k", "v", "o")
            }
        seq = _block(seq, prefix, p, cfg.num_heads, bias, lora, collected if collect_trace else None)

    seq = _rms_norm(seq, p["dec_final_norm_g"])
    text_states = ad.slice_rows(seq, n_visual, total)
    logits = ad.matmul(text_states, p["lm_head_w"])

    answer_rows = np.arange(batch.instruction_ids.size, n_text) + n_visual
    trace = AttentionTrace(
        weights=[w[:, answer_rows, :] for w in collected],
        stream_labels=stream_labels,
        n_visual=n_visual,
    )
    return ForwardResult(
        logits=logits,
        trace=trace,
        stream_stats=stream_stats,
        n_visual=n_visual,
        n_text=n_text,
        param_tensors=p,
    )


def loss_mask_for(batch: TrainingBatch) -> np.ndarray:
    """Mask over text positions whose next-token prediction is an answer token."""
    n_instr = batch.instruction_ids.size
    n_text = n_instr + batch.target_ids.size
    mask = np.zeros(n_text, dtype=np.float64)
    mask[n_instr - 1 : n_text - 1] = 1.0
    return mask


def loss(result: ForwardResult, batch: TrainingBatch, reduction: str = "mean") -> Tensor:
    """Autoregressive NLL over the masked answer positions."""
    if reduction not in ("mean", "sum"):
        raise UsageError(f"reduction must be mean or sum, got {reduction!r}")
    mask = batch.loss_mask if batch.loss_mask is not None else loss_mask_for(batch)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[0] != result.n_text:
        raise StructuralError(f"loss mask covers {mask.shape[0]} positions, text has {result.n_text}")
    if mask.sum() == 0:
        raise UsageError("loss mask selects no positions")
    if mask[-1] != 0:
        raise UsageError("the final text position has no next token to predict")

    n_instr = batch.instruction_ids.size
    vocab = result.logits.data.shape[1]
    onehot = np.zeros_like(result.logits.data)
    positions = np.nonzero(mask)[0]
    # Position p predicts the token at p + 1 in the text sequence.
    text_ids = np.concatenate([batch.instruction_ids, batch.target_ids])
    for pos in positions:
        onehot[pos, text_ids[pos + 1]] = 1.0

    logp = ad.log_softmax_rows(result.logits)
    picked = ad.sum_(ad.mul(logp, Tensor(onehot)))
    nll = ad.mul(picked, -1.0)
    if reduction == "mean":
        nll = ad.mul(nll, 1.0 / float(mask.sum()))
    return nll
