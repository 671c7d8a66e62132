"""Acceptance suite: every criterion at its stated tolerance, one PASS line
each (run with -s to see them)."""

import math
import time

import numpy as np
import pytest

from polarkit.analysis import Detection, bbox_iou, diff_detections, threshold_evidence_mask
from polarkit.coco import decode_rle, rasterize_polygon
from polarkit.datagen import (
    CaptionSample,
    InstructionSample,
    StubClient,
    assemble_prompt,
    compose_splits,
    verify,
    verify_scene_disjoint,
)
from polarkit.encoding import boundary_continuity_gap, encode, verify_normalized_stokes_identity
from polarkit.fusion import (
    DualStreamModel,
    ModelConfig,
    forward,
    gradient_check,
    make_overfit_fixture,
    make_toy_batch,
    polarization_attention_ratio,
    run_overfit_fixture,
    run_training,
    stream_scale_report,
    uniform_trace,
)
from polarkit.fusion.model import TrainingBatch
from polarkit.judge import EvalSample, JudgedSample, StubJudgeClient, aggregate, judge
from polarkit.stokes import (
    PolarimetricMap,
    StokesMap,
    compute_polarimetric,
    decode_stokes,
    synthesize_stack,
)

from test_datagen import make_reflection_record, make_transparent_record


def _pass(number: int, text: str) -> None:
    print(f"[acceptance] C{number:02d} PASS: {text}", flush=True)


def _random_valid_stokes(rng, shape):
    s0 = rng.uniform(0.1, 4.0, size=shape)
    frac = rng.uniform(0.0, 1.0, size=shape)
    phi = rng.uniform(0.0, np.pi, size=shape)
    return StokesMap(s0=s0, s1=s0 * frac * np.cos(2 * phi), s2=s0 * frac * np.sin(2 * phi))


def test_c01_stokes_round_trip():
    rng = np.random.default_rng(101)
    started = time.perf_counter()
    ref = _random_valid_stokes(rng, (100, 100))  # 10^4 triples
    decoded = decode_stokes(synthesize_stack(ref))
    worst = 0.0
    for got, want in ((decoded.s0, ref.s0), (decoded.s1, ref.s1), (decoded.s2, ref.s2)):
        rel = np.abs(got - want) / np.maximum(np.abs(want), ref.s0)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - started
    assert worst <= 1e-12
    assert elapsed < 1.0
    _pass(1, f"10^4 round trips, max relative error {worst:.2e}, {elapsed * 1e3:.0f} ms")


def test_c02_normalized_stokes_identity():
    rng = np.random.default_rng(102)
    sm = _random_valid_stokes(rng, (400, 250))  # 10^5 pixels
    pm = compute_polarimetric(sm)
    encoded = encode(sm, pm, "decoupled")
    deviation = verify_normalized_stokes_identity(sm, encoded)
    assert deviation <= 1e-9
    # Independent per-pixel check of the same identity.
    magnitude = np.hypot(sm.s1, sm.s2)
    live = magnitude > 1e-6 * sm.s0.max()
    dev_sin = np.abs(encoded.c2 - np.divide(sm.s2, magnitude, where=live, out=np.zeros_like(sm.s2)))
    dev_cos = np.abs(encoded.c3 - np.divide(sm.s1, magnitude, where=live, out=np.ones_like(sm.s1)))
    brute = max(dev_sin[live].max(), dev_cos[live].max())
    assert brute <= 1e-9
    _pass(2, f"identity deviation {max(deviation, brute):.2e} over 10^5 fuzzed pixels")


def test_c03_boundary_continuity():
    decoupled = boundary_continuity_gap(0.01, math.pi - 0.01, "decoupled")
    raw_aolp = boundary_continuity_gap(0.01, math.pi - 0.01, "s0_dolp_aolp")
    assert decoupled <= 0.05
    assert raw_aolp >= 3.0
    assert decoupled == pytest.approx(0.04, abs=1e-3)
    assert raw_aolp == pytest.approx(3.1216, abs=1e-3)
    _pass(3, f"wraparound gap decoupled {decoupled:.5f} vs raw angle {raw_aolp:.5f}")


def _naive_rle(counts, h, w):
    flat = []
    value = False
    for run in counts:
        flat.extend([value] * run)
        value = not value
    mask = np.zeros((h, w), dtype=bool)
    for k, bit in enumerate(flat):
        mask[k % h, k // h] = bit
    return mask


def _broadcast_polygon_oracle(pts, h, w):
    pts = np.asarray(pts, dtype=np.float64)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if x1.size == 0:
        return np.zeros((h, w), dtype=bool)
    cy = (np.arange(h) + 0.5)[:, None, None]
    cx = (np.arange(w) + 0.5)[None, :, None]
    ymin, ymax = np.minimum(y1, y2), np.maximum(y1, y2)
    active = (ymin <= cy) & (cy < ymax)
    with np.errstate(invalid="ignore"):
        xint = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
    crossings = (active & (cx < xint)).sum(axis=-1)
    return crossings % 2 == 1


def test_c04_coco_decoding_against_oracles():
    rng = np.random.default_rng(104)
    started = time.perf_counter()
    for _ in range(1000):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        total = h * w
        counts = []
        while total > 0:
            run = int(rng.integers(0 if not counts else 1, total + 1))
            counts.append(run)
            total -= run
        mask = decode_rle(counts, h, w)
        assert (mask.bits == _naive_rle(counts, h, w)).all()
    for _ in range(1000):
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        n = int(rng.integers(3, 9))
        pts = np.column_stack([rng.uniform(0, w, size=n), rng.uniform(0, h, size=n)])
        mask = rasterize_polygon([tuple(p) for p in pts], h, w)
        assert (mask.bits == _broadcast_polygon_oracle(pts, h, w)).all()
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    _pass(4, f"1000 RLE + 1000 polygon instances agree bit-exactly, {elapsed:.2f} s")


def test_c05_reflection_prior_monotonicity():
    rng = np.random.default_rng(105)
    for _ in range(100):
        shape = (14, 17)
        polar = PolarimetricMap(dolp=rng.uniform(0, 1, shape), aolp=np.zeros(shape))
        rgb_with = rng.uniform(0, 1, (3,) + shape)
        rgb_without = rng.uniform(0, 1, (3,) + shape)
        tau_d = float(rng.uniform(0, 0.9))
        tau_r = float(rng.uniform(0, 0.9))
        base = threshold_evidence_mask(polar, rgb_with, rgb_without, tau_d, tau_r)
        for bump_d, bump_r in ((rng.uniform(0, 0.3), 0.0), (0.0, rng.uniform(0, 0.3)),
                               (rng.uniform(0, 0.3), rng.uniform(0, 0.3))):
            tighter = threshold_evidence_mask(
                polar, rgb_with, rgb_without, tau_d + bump_d, tau_r + bump_r
            )
            assert not (tighter & ~base).any()
    _pass(5, "raising either threshold never grew the pre-opening mask (100 scenes)")


def _oracle_spurious(with_refl, without_refl, tau_iou):
    """Exhaustive optimal matching by DFS over feasible same-label pairs,
    maximizing (match count, total IoU)."""
    feasible = {}
    for i, da in enumerate(with_refl):
        for j, db in enumerate(without_refl):
            if da.label == db.label:
                iou = bbox_iou(da.bbox, db.bbox)
                if iou >= tau_iou:
                    feasible.setdefault(i, []).append((j, iou))

    best = {"key": (-1, -1.0), "matched": frozenset()}
    order = sorted(feasible)

    def dfs(idx, used, count, total, matched):
        if idx == len(order):
            key = (count, total)
            if key > best["key"]:
                best["key"] = key
                best["matched"] = frozenset(matched)
            return
        i = order[idx]
        dfs(idx + 1, used, count, total, matched)
        for j, iou in feasible[i]:
            if j not in used:
                dfs(idx + 1, used | {j}, count + 1, total + iou, matched | {i})

    dfs(0, frozenset(), 0, 0.0, frozenset())
    return {i for i in range(len(with_refl)) if i not in best["matched"]}


def test_c06_detection_diff_matches_exhaustive_oracle():
    rng = np.random.default_rng(106)
    labels = ("glass", "car", "cup", "chair")
    for _ in range(500):
        def rand_list(n):
            out = []
            for _ in range(n):
                x, y = rng.uniform(0, 24, size=2)
                w, h = rng.uniform(2, 12, size=2)
                out.append(Detection(label=str(rng.choice(labels)), bbox=(x, y, w, h)))
            return out

        with_refl = rand_list(int(rng.integers(0, 7)))
        without_refl = rand_list(int(rng.integers(0, 7)))
        got = diff_detections(with_refl, without_refl, tau_iou=0.5)
        got_spurious = {i for i, d in enumerate(with_refl) if d in got.spurious}
        assert got_spurious == _oracle_spurious(with_refl, without_refl, 0.5)
    _pass(6, "greedy matching agreed with the exhaustive oracle on 500 random cases")


def test_c07_dataset_composition_at_published_scale():
    captions = []
    for k in range(6300):
        sid = f"refl-{k:05d}"
        for variant in ("geometry", "spatial_relationship", "physical_signal_discrepancy"):
            captions.append(
                CaptionSample(scene_id=sid, scenario="reflection", variant=variant, text="t")
            )
    for k in range(3200):
        sid = f"glass-{k:05d}"
        for variant in ("geometry", "spatial_relationship", "physical_signal_discrepancy"):
            captions.append(
                CaptionSample(scene_id=sid, scenario="transparent", variant=variant, text="t")
            )
    assert len(captions) == 28500
    caption_targets = {
        "train": {"reflection": 16800, "transparent": 8400},
        "val": {"reflection": 2100, "transparent": 1200},
    }
    composed, report = compose_splits(captions, caption_targets, seed=7)
    assert report.total == 28500
    assert report.by_split == {"train": 25200, "val": 3300}
    refl = sum(report.by_split_scenario[s].get("reflection", 0) for s in ("train", "val"))
    transp = sum(report.by_split_scenario[s].get("transparent", 0) for s in ("train", "val"))
    assert (refl, transp) == (18900, 9600)
    verify_scene_disjoint(composed)

    instructions = []
    eval_pairs = ("scene_description", "reflection_recognition")
    train_pairs = ("counterfactual_reasoning", "glass_detection")
    for k in range(23400):
        sid = f"pair-{k:05d}"
        tasks = eval_pairs if k < 700 else train_pairs
        scenario = "reflection" if tasks is eval_pairs or k % 2 else "transparent"
        for task in tasks:
            task_scenario = "reflection" if task in (
                "scene_description", "reflection_recognition", "counterfactual_reasoning"
            ) else "transparent"
            instructions.append(
                InstructionSample(scene_id=sid, scenario=scenario, task=task, turns=[("q", "a")])
            )
    assert len(instructions) == 46800
    instruction_targets = {
        "train": {"any": 41900},
        "val": {"any": 3900},
        "test": {"any": 1000},
    }
    composed_pairs, pair_report = compose_splits(instructions, instruction_targets, seed=11)
    assert pair_report.total == 46800
    assert pair_report.by_split == {"train": 41900, "val": 3900, "test": 1000}
    test_tasks = set(pair_report.by_split_task["test"])
    assert test_tasks <= {"glass_counting", "glass_localization", "glass_description",
                          "scene_description", "reflection_recognition"}
    verify_scene_disjoint(composed_pairs)
    _pass(7, "28.5K captions -> 25.2K/3.3K (18.9K/9.6K) and 46.8K pairs -> 41.9K/3.9K/1K")


def _adversarial_cases():
    """Yield (response, job, expected_reason_prefix) triples."""
    refl = make_reflection_record("adv-r")
    glass3 = make_transparent_record("adv-t", n_instances=3)
    stub = StubClient()

    caption_job = assemble_prompt(refl, "stage1.reflection.captions")
    caption = stub.complete(caption_job.prompt)
    count_job = assemble_prompt(glass3, "stage2.glass.glass_counting")
    counting = stub.complete(count_job.prompt)
    cf_job = assemble_prompt(refl, "stage2.reflection.counterfactual_reasoning")
    desc_job = assemble_prompt(refl, "stage2.reflection.scene_description")
    description = stub.complete(desc_job.prompt)

    def corrupt(kind):
        if kind == 0:
            return caption.replace("reflective surface", "red reflective surface"), caption_job, "lexical.color_term"
        if kind == 1:
            return caption.replace("reflective surface", "glossy surface"), caption_job, "lexical.texture_term"
        if kind == 2:
            return caption.replace("flat extent", "printed lettering"), caption_job, "lexical.readable_text_claim"
        if kind == 3:
            kept = "\n".join(l for l in caption.splitlines() if "[geometry]" not in l)
            return kept, caption_job, "structural.missing_variant"
        if kind == 4:
            lines = caption.splitlines()
            lines[0] = "[geometry] Too short."
            return "\n".join(lines), caption_job, "structural.length"
        if kind == 5:
            wrong = counting.replace("There are 3", "There are 5")
            return wrong, count_job, "numeric.count_mismatch"
        if kind == 6:
            return "Q: Can you describe this scene for me?", desc_job, "structural.missing"
        if kind == 7:
            return (
                "Q: I can clearly see a red car in this scene. What can you tell me about it?\n"
                "A: Yes, the red car is parked right there and you could walk up and touch its "
                "body panels without any trouble at all."
            ), cf_job, "counterfactual.presence_asserted"
        raise AssertionError(kind)

    return [corrupt(k % 8) for k in range(50)]


def test_c08_verification_rules_adversarial_suite():
    rejected = 0
    for response, job, expected_prefix in _adversarial_cases():
        result = verify(response, job)
        assert not result.accepted, (expected_prefix, response[:80])
        assert any(r.startswith(expected_prefix) for r in result.reasons), (
            expected_prefix,
            result.reasons,
        )
        rejected += 1
    assert rejected == 50

    stub = StubClient()
    accepted = 0
    template_cycle = [
        ("stage1.reflection.captions", "reflection"),
        ("stage1.glass.captions", "transparent"),
        ("stage2.reflection.scene_description", "reflection"),
        ("stage2.reflection.reflection_recognition", "reflection"),
        ("stage2.reflection.counterfactual_reasoning", "reflection"),
        ("stage2.glass.glass_detection", "transparent"),
        ("stage2.glass.glass_counting", "transparent"),
        ("stage2.glass.glass_localization", "transparent"),
        ("stage2.glass.glass_description", "transparent"),
    ]
    for k in range(50):
        template_id, scenario = template_cycle[k % len(template_cycle)]
        if scenario == "reflection":
            record = make_reflection_record(f"clean-r{k}")
        else:
            record = make_transparent_record(f"clean-t{k}", n_instances=1 + k % 4)
        job = assemble_prompt(record, template_id)
        result = verify(stub.complete(job.prompt), job)
        assert result.accepted, result.reasons
        accepted += 1
    assert accepted == 50
    _pass(8, "50/50 adversarial rejected with expected codes, 50/50 clean accepted")


def test_c09_fusion_simulator():
    started = time.perf_counter()

    # (a) gradient check, >= 20 coordinates per group, both stages' groups.
    model = DualStreamModel(ModelConfig(seed=9))
    model.set_stage("stage2")
    batch = make_toy_batch(model.config, np.random.default_rng(9), "stage2")
    errors = gradient_check(model, batch, coords_per_group=20)
    assert set(errors) == set(model.trainable_mask())
    assert max(errors.values()) <= 1e-4, errors

    # (b) freezing invariants over 100-step runs, bitwise, both stages.
    for stage in ("stage1", "stage2"):
        run_model = DualStreamModel(ModelConfig(seed=10))
        run_model.set_stage(stage)
        run_batch = make_toy_batch(run_model.config, np.random.default_rng(11), stage)
        mask = run_model.trainable_mask()
        frozen = {
            name: run_model.params[name].copy()
            for name in run_model.params
            if not mask[run_model.groups[name]]
        }
        run_training(run_model, [run_batch], steps=100, lr=0.02)
        for name, before in frozen.items():
            assert np.array_equal(run_model.params[name], before), (stage, name)

    # (c) zero-initialized adapters leave step-0 logits unchanged.
    fresh, fresh_batch = make_overfit_fixture()
    with_adapters = forward(fresh, fresh_batch, use_adapters=True)
    without = forward(fresh, fresh_batch, use_adapters=False)
    assert np.abs(with_adapters.logits.data - without.logits.data).max() <= 1e-12

    # (d) the recorded overfit fixture reaches < 0.1 nats.
    losses = run_overfit_fixture()
    assert losses[-1] < 0.1, losses[-1]

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    _pass(9, f"gradients <=1e-4, 100-step freezing bitwise, adapter no-op, overfit "
             f"{losses[-1]:.4f} nats, total {elapsed:.1f} s")


def test_c10_attention_ratio_uniform_constructions():
    equal = uniform_trace(n_rgb=576, n_polar=576, layers=2, heads=2, queries=3)
    ratios = polarization_attention_ratio(equal)
    assert np.abs(ratios - 0.5).max() <= 1e-12
    skewed = uniform_trace(n_rgb=4, n_polar=12)
    assert abs(polarization_attention_ratio(skewed)[0] - 0.75) <= 1e-12
    for trace in (equal, skewed):
        for weights in trace.weights:
            assert np.abs(weights.sum(axis=-1) - 1.0).max() <= 1e-9

    model = DualStreamModel(ModelConfig(seed=12))
    model.set_stage("stage2")
    result = forward(model, make_toy_batch(model.config, np.random.default_rng(13), "stage2"))
    for weights in result.trace.weights:
        assert np.abs(weights.sum(axis=-1) - 1.0).max() <= 1e-9
    live_ratios = polarization_attention_ratio(result.trace)
    assert ((live_ratios >= 0) & (live_ratios <= 1)).all()
    _pass(10, "uniform ratios exact (0.5 and 0.75), all attention rows sum to 1")


def test_c11_stream_scale_invariance():
    model = DualStreamModel(ModelConfig(seed=14))
    model.set_stage("stage2")
    batch = make_toy_batch(model.config, np.random.default_rng(15), "stage2")
    base = stream_scale_report(model, batch)
    scaled = stream_scale_report(
        model,
        TrainingBatch(
            polar=batch.polar * 100.0,
            rgb=batch.rgb,
            instruction_ids=batch.instruction_ids,
            target_ids=batch.target_ids,
        ),
    )
    diff = np.abs(
        np.array(base["polar_post_norm_rms"]) - np.array(scaled["polar_post_norm_rms"])
    ).max()
    assert diff <= 1e-9
    assert np.abs(np.array(base["polar_post_norm_rms"]) - base["norm_gain"]).max() <= 1e-9
    _pass(11, f"100x input scaling moved post-norm RMS by {diff:.2e}")


def test_c12_judge_aggregation():
    def judged(task, score):
        sample = EvalSample(task=task, question="Can you describe this for me?",
                            reference="ref", prediction="pred")
        return JudgedSample(sample=sample, scores=[score])

    table = aggregate([judged("glass_counting", 4), judged("glass_counting", 6),
                       judged("scene_description", 9)])
    assert table.overall == (4.0 + 6.0 + 9.0) / 3.0

    uniform = aggregate([
        judged("glass_counting", 2), judged("glass_counting", 8),
        judged("scene_description", 5), judged("scene_description", 9),
        judged("reflection_recognition", 3), judged("reflection_recognition", 10),
    ])
    means = [r.mean for r in uniform.per_task.values()]
    assert abs(uniform.overall - sum(means) / len(means)) <= 1e-12

    def run_stub():
        samples = [
            EvalSample(task=task, question=f"Can you grade sample {k} for me?",
                       reference=f"reference {k}", prediction=f"prediction {k}")
            for k, task in enumerate(
                ["glass_counting", "glass_localization", "glass_description",
                 "scene_description", "reflection_recognition"] * 3
            )
        ]
        return aggregate([judge(s, StubJudgeClient(), repeats=3) for s in samples]).as_dict()

    assert run_stub() == run_stub()
    _pass(12, "weighted overall exact, uniform-count identity <=1e-12, stub judging deterministic")
