"""End-to-end generation driver: assemble, generate, verify, collect.

Jobs run with bounded concurrency; results are collected in submission
order, so outputs are deterministic for a deterministic client regardless
of the in-flight limit.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .client import RetryPolicy
from .generate import assemble_prompt, generate
from .records import CaptionSample, GenerationJob, InstructionSample, SceneRecord
from .templates import REGISTRY, TemplateSpec, get_template
from .verify import (
    DEFAULT_RULES,
    VerifyRules,
    parse_caption_response,
    parse_instruction_response,
)
from .verify import verify as verify_response


@dataclass
class GenerationOutcome:
    captions: list[CaptionSample] = field(default_factory=list)
    instructions: list[InstructionSample] = field(default_factory=list)
    rejections: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    attempts: int = 0

    @property
    def accepted_count(self) -> int:
        return len(self.captions) + len(self.instructions)

    def report(self) -> dict:
        return {
            "captions": len(self.captions),
            "instructions": len(self.instructions),
            "rejections": len(self.rejections),
            "skipped": len(self.skipped),
            "jobs": self.attempts,
        }


def template_ids_for(stage: int | None = None) -> list[str]:
    """All template ids, optionally restricted to one stage."""
    return [tid for tid, spec in sorted(REGISTRY.items()) if stage is None or spec.stage == stage]


def template_applicable(record: SceneRecord, spec: TemplateSpec) -> bool:
    if spec.scenario != record.scenario:
        return False
    if spec.task == "counterfactual_reasoning" and not record.spurious:
        return False
    return True


def run_generation(
    records: list[SceneRecord],
    template_ids: list[str],
    client,
    rules: VerifyRules = DEFAULT_RULES,
    model: str = "stub",
    temperature: float = 0.0,
    retry: RetryPolicy | None = None,
    concurrency: int = 1,
    sleep=time.sleep,
) -> GenerationOutcome:
    outcome = GenerationOutcome()
    jobs: list[GenerationJob] = []
    for record in records:
        for template_id in template_ids:
            spec = get_template(template_id)
            if spec.scenario != record.scenario:
                continue
            if not template_applicable(record, spec):
                outcome.skipped.append(
                    {"scene_id": record.scene_id, "template_id": template_id, "reason": "no_spurious_objects"}
                )
                continue
            jobs.append(
                assemble_prompt(record, template_id, model=model, temperature=temperature, retry=retry)
            )

    outcome.attempts = len(jobs)
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            responses = list(pool.map(lambda j: generate(j, client, sleep=sleep), jobs))
    else:
        responses = [generate(job, client, sleep=sleep) for job in jobs]

    for job, response in zip(jobs, responses):
        result = verify_response(response, job, rules)
        if not result.accepted:
            outcome.rejections.append(
                {"scene_id": job.scene_id, "template_id": job.template_id, "reasons": result.reasons}
            )
            continue
        spec = get_template(job.template_id)
        scenario = job.facts["scenario"]
        if spec.kind == "captions":
            for variant, text in sorted(parse_caption_response(response).items()):
                outcome.captions.append(
                    CaptionSample(scene_id=job.scene_id, scenario=scenario, variant=variant, text=text)
                )
        else:
            outcome.instructions.append(
                InstructionSample(
                    scene_id=job.scene_id,
                    scenario=scenario,
                    task=spec.task,
                    turns=parse_instruction_response(response),
                )
            )
    return outcome
