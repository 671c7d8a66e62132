"""Prompt assembly and client-facing generation.

Assembly is a pure function of (record, template, parameters): identical
inputs produce byte-identical payloads, which is what makes stub pipelines
reproducible end to end.
"""

from __future__ import annotations

import logging
import time

from ..errors import DataError, GenerationError, TransportError, UsageError
from .client import RetryPolicy
from .lexicon import lexicon_hits, strip_lexicon_words
from .records import GenerationJob, SceneRecord
from .templates import TemplateSpec, get_template, render_prompt

logger = logging.getLogger(__name__)


def _fmt(value: float, digits: int = 4) -> str:
    return f"{float(value):.{digits}f}"


def render_structured_facts(record: SceneRecord, spec: TemplateSpec) -> tuple[str, dict]:
    """Render the [facts] block and its machine-readable twin.

    Polarization-only templates receive labels with color/texture vocabulary
    stripped; geometry, positions, and polarimetric statistics pass through.
    """

    def _label(detection) -> str:
        if spec.polarization_only:
            return strip_lexicon_words(detection.label)
        return detection.label

    lines = [f"scene_id: {record.scene_id}", f"scenario: {record.scenario}"]
    facts: dict = {"scene_id": record.scene_id, "scenario": record.scenario}

    if record.scenario == "reflection":
        ev = record.reflection_evidence or {}
        coverage = _fmt(ev.get("coverage_fraction", 0.0))
        mean_dolp = _fmt(ev.get("mean_dolp_inside", 0.0))
        mean_diff = _fmt(ev.get("mean_rgb_difference_inside", 0.0))
        position = str(ev.get("region_position", "center"))
        objects = [_label(d) for d in record.detections]
        spurious = [_label(d) for d in record.spurious]
        persistent = [_label(d) for d in record.persistent]
        lines += [
            f"coverage_fraction: {coverage}",
            f"mean_dolp: {mean_dolp}",
            f"mean_rgb_difference: {mean_diff}",
            f"region_position: {position}",
            f"objects: {' | '.join(objects)}",
            f"spurious_objects: {' | '.join(spurious)}",
            f"persistent_objects: {' | '.join(persistent)}",
        ]
        facts.update(
            {
                "coverage_fraction": coverage,
                "mean_dolp": mean_dolp,
                "mean_rgb_difference": mean_diff,
                "region_position": position,
                "objects": objects,
                "spurious_objects": spurious,
                "persistent_objects": persistent,
            }
        )
    else:
        instances = []
        lines.append(f"glass_count: {len(record.glass_instances)}")
        for k, inst in enumerate(record.glass_instances, start=1):
            fields = {
                "position": inst.relative_position,
                "area_px": str(inst.area),
                "dolp_mean": _fmt(inst.dolp_mean, 3),
                "dolp_std": _fmt(inst.dolp_std, 3),
                "dolp_p10": _fmt(inst.dolp_p10, 3),
                "dolp_p90": _fmt(inst.dolp_p90, 3),
            }
            lines.append(
                f"glass_instance_{k}: " + "; ".join(f"{k2}={v2}" for k2, v2 in fields.items())
            )
            instances.append(fields)
        facts.update({"glass_count": str(len(record.glass_instances)), "instances": instances})

    block = "[facts]\n" + "\n".join(lines) + "\n[/facts]"
    return block, facts


def assemble_prompt(
    record: SceneRecord,
    template_id: str,
    model: str = "stub",
    temperature: float = 0.0,
    retry: RetryPolicy | None = None,
) -> GenerationJob:
    """Build the deterministic text payload for one scene and template.

    Counterfactual jobs require at least one spurious object; templates and
    scenes must agree on the scenario.
    """
    spec = get_template(template_id)
    if spec.scenario != record.scenario:
        raise UsageError(
            f"template {template_id} expects a {spec.scenario} scene, got {record.scenario} "
            f"({record.scene_id})"
        )
    if spec.task == "counterfactual_reasoning" and not record.spurious:
        raise UsageError(
            f"scene {record.scene_id} has no spurious objects; counterfactual jobs need at least one"
        )
    facts_text, facts = render_structured_facts(record, spec)
    if spec.polarization_only:
        hits = lexicon_hits(facts_text)
        if hits:
            raise DataError(
                f"polarization prompt for scene {record.scene_id} leaked lexicon terms: {hits}"
            )
    prompt = render_prompt(spec, facts_text)
    return GenerationJob(
        template_id=template_id,
        scene_id=record.scene_id,
        prompt=prompt,
        structured_facts=facts_text,
        facts=facts,
        model=model,
        temperature=temperature,
        retry=retry or RetryPolicy(),
    )


def generate(job: GenerationJob, client, sleep=time.sleep) -> str:
    """Run one job against a client with bounded retries.

    Transient transport failures are retried with exponential backoff; an
    empty response is a generation error and is not retried.
    """
    policy = job.retry
    last_error: TransportError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            logger.debug("job %s/%s attempt %d", job.scene_id, job.template_id, attempt)
            response = client.complete(job.prompt, model=job.model, temperature=job.temperature)
        except GenerationError:
            raise
        except TransportError as exc:
            last_error = exc
            logger.warning(
                "job %s/%s attempt %d failed: %s", job.scene_id, job.template_id, attempt, exc
            )
            if attempt < policy.max_attempts:
                sleep(policy.delay(attempt))
            continue
        if not response or not response.strip():
            raise GenerationError(f"job {job.scene_id}/{job.template_id} returned an empty response")
        logger.debug("job %s/%s succeeded on attempt %d", job.scene_id, job.template_id, attempt)
        return response
    raise TransportError(
        f"job {job.scene_id}/{job.template_id} failed after {policy.max_attempts} attempts: {last_error}"
    )
