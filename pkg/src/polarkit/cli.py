"""Command-line surface: reproducible pipelines over the library modules.

Every command validates inputs, writes outputs atomically, embeds its
parameter snapshot into the artifacts it produces, and prints one
machine-parseable JSON summary line as its final stdout line.

Exit codes: 0 success, 2 usage, 3 data/format, 4 transport, 5 verification
or composition shortfall.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, coco, encoding, formats, mosaic, stokes
from .datagen import (
    CaptionSample,
    HttpChatClient,
    InstructionSample,
    RetryPolicy,
    SceneRecord,
    StubClient,
    compose_splits,
    run_generation,
    template_ids_for,
)
from .errors import (
    CompositionError,
    DataError,
    FormatError,
    PolarkitError,
    UsageError,
    exit_code_for,
)
from .fusion import (
    DualStreamModel,
    ModelConfig,
    forward,
    load_checkpoint,
    load_dataset,
    polarization_attention_ratio,
    run_training,
    save_checkpoint,
    stream_scale_report,
)
from .judge import EvalSample, StubJudgeClient, aggregate, judge, render_result_table


def _summary(command: str, **fields) -> None:
    payload = {"command": command, "status": "ok", **fields}
    print(json.dumps(payload, sort_keys=True))


def _read_stokes_map(path) -> tuple[stokes.StokesMap, dict]:
    channels, names, meta = formats.read_float_map(path)
    if names != ["s0", "s1", "s2"]:
        raise FormatError(f"{path}: expected channels [s0, s1, s2], got {names}")
    return stokes.StokesMap(s0=channels[0], s1=channels[1], s2=channels[2]), meta


def _read_polar_map(path) -> stokes.PolarimetricMap:
    channels, names, _ = formats.read_float_map(path)
    if names[:2] != ["dolp", "aolp"]:
        raise FormatError(f"{path}: expected channels [dolp, aolp], got {names}")
    return stokes.PolarimetricMap(dolp=channels[0], aolp=channels[1])


def _read_rgb_map(path) -> np.ndarray:
    channels, names, _ = formats.read_float_map(path)
    if channels.shape[0] != 3:
        raise FormatError(f"{path}: expected a 3-channel rgb map, got {len(names)} channels")
    return channels


def _read_detections(path) -> list[analysis.Detection]:
    payload = formats.read_json(path)
    if not isinstance(payload, dict) or "detections" not in payload:
        raise FormatError(f"{path}: expected an object with a 'detections' list")
    return [analysis.Detection.from_dict(d) for d in payload["detections"]]


def _make_client(args):
    if args.client == "stub":
        return StubClient()
    if not args.endpoint:
        raise UsageError("--endpoint is required for the live client")
    return HttpChatClient(endpoint=args.endpoint, api_key_env=args.api_key_env)


# -- command handlers -------------------------------------------------------


def cmd_decode(args) -> None:
    frame = formats.read_raw_mosaic(args.raw)
    if args.full_res:
        stack = mosaic.interpolate_full_res(frame, method=args.method)
    else:
        stack = mosaic.split_mosaic(frame)
    sm = stokes.decode_stokes(stack)
    pm = stokes.compute_polarimetric(sm, eps_dark=args.eps_dark, eps_phys=args.eps_phys)
    _, residual_summary = stokes.consistency_residual(stack, threshold=args.residual_threshold)

    config = {
        "full_res": args.full_res,
        "method": args.method,
        "eps_dark": args.eps_dark,
        "eps_phys": args.eps_phys,
        "residual_threshold": args.residual_threshold,
        "layout": list(frame.layout),
    }
    out = Path(args.out)
    formats.write_float_map(
        out / "stokes.pfm",
        np.stack([sm.s0, sm.s1, sm.s2]),
        ["s0", "s1", "s2"],
        meta={"config": config, "residual": residual_summary.as_dict()},
    )
    formats.write_float_map(
        out / "polar.pfm",
        np.stack([pm.dolp, pm.aolp]),
        ["dolp", "aolp"],
        meta={"config": config, "diagnostics": pm.diagnostics.as_dict()},
    )
    _summary(
        "decode",
        outputs=[str(out / "stokes.pfm"), str(out / "polar.pfm")],
        residual_max=residual_summary.max,
        degenerate_pixels=pm.diagnostics.degenerate_count,
        overrange_pixels=pm.diagnostics.overrange_count,
    )


def cmd_encode(args) -> None:
    sm, _ = _read_stokes_map(args.stokes_map)
    pm = stokes.compute_polarimetric(sm, eps_dark=args.eps_dark, eps_phys=args.eps_phys)
    encoded = encoding.encode(sm, pm, args.variant)
    config = {"variant": args.variant, "eps_dark": args.eps_dark, "eps_phys": args.eps_phys}
    formats.write_float_map(
        args.out,
        encoded.channels,
        list(encoded.channel_names),
        meta={"config": config, "channel_stats": encoded.channel_stats.tolist()},
    )
    _summary("encode", outputs=[str(args.out)], variant=args.variant)


def cmd_analyze_reflection(args) -> None:
    pm = _read_polar_map(args.polar_map)
    rgb_with = _read_rgb_map(args.rgb_with)
    rgb_without = _read_rgb_map(args.rgb_without)
    evidence = analysis.localize_reflection(
        pm,
        rgb_with,
        rgb_without,
        tau_dolp=args.tau_dolp,
        tau_rgb=args.tau_rgb,
        opening_radius=args.radius,
    )
    config = {"tau_dolp": args.tau_dolp, "tau_rgb": args.tau_rgb, "opening_radius": args.radius}
    out = Path(args.out)
    mask = evidence.mask.astype(np.float64)
    formats.write_float_map(
        out / "reflection_mask.pfm",
        np.stack([mask, pm.dolp * mask]),
        ["mask", "dolp_overlay"],
        meta={"config": config},
    )
    cx_cy = analysis.mask_centroid(evidence.mask) if evidence.mask.any() else None
    payload = {
        "config": config,
        "evidence": evidence.as_dict(),
        "region_position": (
            analysis.grid_cell_name(*cx_cy, pm.width, pm.height) if cx_cy else None
        ),
    }
    formats.write_json(out / "reflection_evidence.json", payload)
    _summary(
        "analyze-reflection",
        outputs=[str(out / "reflection_mask.pfm"), str(out / "reflection_evidence.json")],
        coverage_fraction=evidence.coverage_fraction,
    )


def cmd_analyze_glass(args) -> None:
    pm = _read_polar_map(args.polar_map)
    parsed = coco.parse_annotations(Path(args.coco).read_text("utf-8"))
    if args.image_id is not None:
        image = parsed.image_by_id(args.image_id)
    else:
        matching = [
            img for img in parsed.images if (img.height, img.width) == (pm.height, pm.width)
        ]
        if len(matching) != 1:
            raise UsageError(
                f"{len(matching)} images match the map dimensions; pass --image-id explicitly"
            )
        image = matching[0]
    if (image.height, image.width) != (pm.height, pm.width):
        raise DataError(
            f"image {image.id} is {image.height}x{image.width}, map is {pm.height}x{pm.width}"
        )
    stats = []
    for ann in parsed.annotations_for_image(image.id):
        mask = coco.decode_segmentation(ann, image)
        stats.append(analysis.glass_stats(mask, pm).as_dict())
    config = {"image_id": image.id}
    formats.write_json(args.out, {"config": config, "instances": stats, "warnings": parsed.warnings})
    _summary("analyze-glass", outputs=[str(args.out)], instances=len(stats))


def cmd_diff_detections(args) -> None:
    with_refl = _read_detections(args.with_detections)
    without_refl = _read_detections(args.without_detections)
    result = analysis.diff_detections(with_refl, without_refl, tau_iou=args.tau_iou)
    formats.write_json(
        args.out,
        {"config": {"tau_iou": args.tau_iou}, **result.as_dict()},
    )
    _summary(
        "diff-detections",
        outputs=[str(args.out)],
        spurious=len(result.spurious),
        persistent=len(result.persistent),
    )


def cmd_gen(args) -> None:
    records = [SceneRecord.from_dict(rec) for rec in formats.read_jsonl(args.records)]
    stage = None if args.stage == "all" else int(args.stage)
    template_ids = template_ids_for(stage)
    client = _make_client(args)
    outcome = run_generation(
        records,
        template_ids,
        client,
        model=args.model,
        temperature=args.temperature,
        retry=RetryPolicy(max_attempts=args.retries),
        concurrency=args.concurrency,
    )
    out = Path(args.out)
    config = {
        "client": args.client,
        "model": args.model,
        "temperature": args.temperature,
        "retries": args.retries,
        "stage": args.stage,
        "templates": template_ids,
    }
    formats.write_jsonl(out / "captions.jsonl", [c.as_dict() for c in outcome.captions])
    formats.write_jsonl(out / "instructions.jsonl", [i.as_dict() for i in outcome.instructions])
    formats.write_jsonl(out / "rejections.jsonl", outcome.rejections)
    formats.write_json(out / "gen_report.json", {"config": config, **outcome.report()})
    if outcome.accepted_count == 0:
        raise CompositionError("generation produced no accepted samples")
    _summary("gen", outputs=[str(out)], **outcome.report())


def cmd_compose(args) -> None:
    targets = formats.read_json(args.targets)
    if not isinstance(targets, dict) or not ({"captions", "instructions"} & set(targets)):
        raise UsageError("targets file needs a 'captions' and/or 'instructions' section")
    accepted = Path(args.accepted)
    out = Path(args.out)
    summary_fields = {}
    reports = {}
    if "captions" in targets:
        samples = [CaptionSample.from_dict(r) for r in formats.read_jsonl(accepted / "captions.jsonl")]
        composed, report = compose_splits(samples, targets["captions"], seed=args.seed)
        formats.write_jsonl(out / "captions.jsonl", [c.as_dict() for c in composed])
        reports["captions"] = report.as_dict()
        summary_fields["captions"] = report.total
    if "instructions" in targets:
        samples = [
            InstructionSample.from_dict(r)
            for r in formats.read_jsonl(accepted / "instructions.jsonl")
        ]
        composed, report = compose_splits(samples, targets["instructions"], seed=args.seed)
        formats.write_jsonl(out / "instructions.jsonl", [i.as_dict() for i in composed])
        reports["instructions"] = report.as_dict()
        summary_fields["instructions"] = report.total
    formats.write_json(
        out / "composition_report.json",
        {"config": {"seed": args.seed, "targets": targets}, "reports": reports},
    )
    _summary("compose", outputs=[str(out)], **summary_fields)


def cmd_train_sim(args) -> None:
    config = formats.read_json(args.config)
    model_config = ModelConfig.from_dict(config.get("model", {}))
    model = DualStreamModel(model_config)
    batches = load_dataset(args.data)
    out = Path(args.out)
    log = {"config": config, "stages": {}}

    stage1_steps = int(config.get("stage1_steps", 0))
    stage2_steps = int(config.get("stage2_steps", 0))
    if stage1_steps:
        model.set_stage("stage1")
        losses = run_training(
            model,
            batches["stage1"],
            steps=stage1_steps,
            lr=float(config.get("lr_stage1", 0.01)),
            group_lrs=config.get("group_lrs_stage1"),
        )
        save_checkpoint(out / "checkpoint_stage1.ckpt", model, step=stage1_steps)
        log["stages"]["stage1"] = {"steps": stage1_steps, "final_loss": losses[-1], "losses": losses}
    if stage2_steps:
        model.set_stage("stage2")
        losses = run_training(
            model,
            batches["stage2"],
            steps=stage2_steps,
            lr=float(config.get("lr_stage2", 0.01)),
            group_lrs=config.get("group_lrs_stage2"),
        )
        save_checkpoint(out / "checkpoint_stage2.ckpt", model, step=stage2_steps)
        log["stages"]["stage2"] = {"steps": stage2_steps, "final_loss": losses[-1], "losses": losses}
    if not log["stages"]:
        raise UsageError("config requests zero steps for both stages")
    formats.write_json(out / "training_log.json", log)
    _summary(
        "train-sim",
        outputs=[str(out)],
        **{stage: info["final_loss"] for stage, info in log["stages"].items()},
    )


def cmd_attn_report(args) -> None:
    model, manifest = load_checkpoint(args.checkpoint)
    batches = load_dataset(args.data)
    stage2 = batches["stage2"]
    if not stage2:
        raise DataError(f"{args.data}: no stage2 samples for the attention report")
    if not 0 <= args.sample_index < len(stage2):
        raise UsageError(f"--sample-index {args.sample_index} out of range (0..{len(stage2) - 1})")
    batch = stage2[args.sample_index]
    model.set_stage("stage2")
    result = forward(model, batch)
    ratios = polarization_attention_ratio(result.trace)
    scale_report = stream_scale_report(model, batch)
    payload = {
        "config": {"checkpoint": str(args.checkpoint), "sample_index": args.sample_index,
                   "model": manifest["config"], "stage": manifest["stage"]},
        "polarization_attention_ratio_per_layer": ratios.tolist(),
        "stream_scale": scale_report,
    }
    formats.write_json(args.out, payload)
    _summary("attn-report", outputs=[str(args.out)], mean_ratio=float(ratios.mean()))


def cmd_judge(args) -> None:
    predictions = formats.read_jsonl(args.predictions)
    references = {r["sample_id"]: r["reference"] for r in formats.read_jsonl(args.references)}
    client = StubJudgeClient() if args.client == "stub" else _make_client(args)
    judged = []
    for rec in predictions:
        sid = rec["sample_id"]
        if sid not in references:
            raise DataError(f"prediction {sid!r} has no matching reference")
        sample = EvalSample(
            task=rec["task"],
            question=rec.get("question", ""),
            reference=references[sid],
            prediction=rec["prediction"],
            sample_id=sid,
        )
        judged.append(judge(sample, client, repeats=args.repeats, model=args.model))
    table = aggregate(judged)
    out = Path(args.out)
    config = {"client": args.client, "model": args.model, "repeats": args.repeats}
    formats.write_json(out / "results.json", {"config": config, **table.as_dict()})
    formats.atomic_write_text(out / "results_table.txt", render_result_table(table) + "\n")
    _summary(
        "judge",
        outputs=[str(out / "results.json"), str(out / "results_table.txt")],
        overall=table.overall,
        samples=table.total_count,
        excluded=table.total_excluded,
    )


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarkit",
        description="Polarimetric imaging toolkit: decoding, encodings, dataset generation, "
        "fusion simulation, and judge-based evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="raw mosaic -> Stokes + DoLP/AoLP maps")
    p.add_argument("raw")
    p.add_argument("out")
    p.add_argument("--full-res", action="store_true", help="interpolate instead of half-res split")
    p.add_argument("--method", default="bilinear", choices=list(mosaic.INTERPOLATION_METHODS))
    p.add_argument("--eps-dark", type=float, default=None)
    p.add_argument("--eps-phys", type=float, default=1e-6)
    p.add_argument("--residual-threshold", type=float, default=1e-6)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("encode", help="Stokes map -> 3-channel polarization encoding")
    p.add_argument("stokes_map")
    p.add_argument("out")
    p.add_argument("--variant", default="decoupled", choices=list(encoding.VARIANTS))
    p.add_argument("--eps-dark", type=float, default=None)
    p.add_argument("--eps-phys", type=float, default=1e-6)
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("analyze-reflection", help="reflection evidence mask + statistics")
    p.add_argument("polar_map")
    p.add_argument("rgb_with")
    p.add_argument("rgb_without")
    p.add_argument("out")
    p.add_argument("--tau-dolp", type=float, default=analysis.DEFAULT_TAU_DOLP)
    p.add_argument("--tau-rgb", type=float, default=analysis.DEFAULT_TAU_RGB)
    p.add_argument("--radius", type=int, default=analysis.DEFAULT_OPENING_RADIUS)
    p.set_defaults(handler=cmd_analyze_reflection)

    p = sub.add_parser("analyze-glass", help="per-instance DoLP statistics from COCO masks")
    p.add_argument("coco")
    p.add_argument("polar_map")
    p.add_argument("out")
    p.add_argument("--image-id", type=int, default=None)
    p.set_defaults(handler=cmd_analyze_glass)

    p = sub.add_parser("diff-detections", help="spurious/persistent split of two detection lists")
    p.add_argument("with_detections")
    p.add_argument("without_detections")
    p.add_argument("out")
    p.add_argument("--tau-iou", type=float, default=analysis.DEFAULT_TAU_IOU)
    p.set_defaults(handler=cmd_diff_detections)

    p = sub.add_parser("gen", help="scene records -> verified caption/instruction samples")
    p.add_argument("records")
    p.add_argument("out")
    p.add_argument("--client", default="stub", choices=["stub", "live"])
    p.add_argument("--stage", default="all", choices=["1", "2", "all"])
    p.add_argument("--model", default="stub")
    p.add_argument("--endpoint", default="")
    p.add_argument("--api-key-env", default="POLARKIT_API_KEY")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--concurrency", type=int, default=1)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("compose", help="accepted samples -> scene-disjoint splits + report")
    p.add_argument("accepted")
    p.add_argument("targets")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_compose)

    p = sub.add_parser("train-sim", help="two-stage toy training with checkpoints")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("out")
    p.set_defaults(handler=cmd_train_sim)

    p = sub.add_parser("attn-report", help="attention-ratio and stream-scale report")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("out")
    p.add_argument("--sample-index", type=int, default=0)
    p.set_defaults(handler=cmd_attn_report)

    p = sub.add_parser("judge", help="score predictions against references")
    p.add_argument("predictions")
    p.add_argument("references")
    p.add_argument("out")
    p.add_argument("--client", default="stub", choices=["stub", "live"])
    p.add_argument("--model", default="stub")
    p.add_argument("--endpoint", default="")
    p.add_argument("--api-key-env", default="POLARKIT_API_KEY")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(handler=cmd_judge)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.handler(args)
    except PolarkitError as exc:
        print(f"polarkit {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"polarkit {args.command}: i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
