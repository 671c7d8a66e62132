"""Prompt template registry.

Four template families ship as editable text files; stage-2 families carry
per-task guidance sections selected by the template id.  A template id is
"stage1.<scenario>.captions" or "stage2.<scenario>.<task>".
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..errors import UsageError
from .records import TASKS


@dataclass(frozen=True)
class TemplateSpec:
    template_id: str
    family_file: str
    scenario: str
    stage: int
    kind: str  # "captions" | "instruction"
    task: str | None = None
    # Stage-1 caption prompts feed the polarization-only branch: structured
    # facts must not leak color/texture vocabulary into them.
    polarization_only: bool = False


def _build_registry() -> dict[str, TemplateSpec]:
    registry = {
        "stage1.reflection.captions": TemplateSpec(
            template_id="stage1.reflection.captions",
            family_file="stage1_reflection_captions.txt",
            scenario="reflection",
            stage=1,
            kind="captions",
            polarization_only=True,
        ),
        "stage1.glass.captions": TemplateSpec(
            template_id="stage1.glass.captions",
            family_file="stage1_glass_captions.txt",
            scenario="transparent",
            stage=1,
            kind="captions",
            polarization_only=True,
        ),
    }
    reflection_tasks = ("scene_description", "reflection_recognition", "counterfactual_reasoning")
    for task in TASKS:
        scenario = "reflection" if task in reflection_tasks else "transparent"
        word = "reflection" if scenario == "reflection" else "glass"
        tid = f"stage2.{word}.{task}"
        registry[tid] = TemplateSpec(
            template_id=tid,
            family_file=f"stage2_{word}_instructions.txt",
            scenario=scenario,
            stage=2,
            kind="instruction",
            task=task,
        )
    return registry


REGISTRY: dict[str, TemplateSpec] = _build_registry()
TEMPLATE_IDS: tuple[str, ...] = tuple(sorted(REGISTRY))


def get_template(template_id: str) -> TemplateSpec:
    try:
        return REGISTRY[template_id]
    except KeyError:
        raise UsageError(
            f"unknown template id {template_id!r}; known ids: {', '.join(TEMPLATE_IDS)}"
        ) from None


@lru_cache(maxsize=None)
def _family_text(family_file: str) -> str:
    return resources.files("polarkit.data.templates").joinpath(family_file).read_text("utf-8")


def _split_guidance(text: str) -> tuple[str, dict[str, str]]:
    """Split a family file into its body and per-task guidance sections."""
    body, sections = text, {}
    if "\n## task: " in text:
        parts = text.split("\n## task: ")
        body = parts[0]
        for chunk in parts[1:]:
            name, _, guidance = chunk.partition("\n")
            sections[name.strip()] = guidance.strip()
    return body, sections


def render_prompt(spec: TemplateSpec, facts_text: str) -> str:
    """Fill the template's slots; plain substring replacement so facts may
    contain any characters."""
    body, sections = _split_guidance(_family_text(spec.family_file))
    prompt = body.replace("{facts}", facts_text)
    if spec.kind == "instruction":
        if spec.task not in sections:
            raise UsageError(f"template family {spec.family_file} has no guidance for {spec.task}")
        prompt = prompt.replace("{task}", spec.task)
        prompt = prompt.replace("{task_guidance}", sections[spec.task])
    return prompt.strip() + "\n"
