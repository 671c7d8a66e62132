"""Record types flowing through the dataset pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..analysis import Detection, GlassInstanceStats
from ..errors import DataError
from .client import RetryPolicy

SCENARIOS = ("reflection", "transparent")

TASKS = (
    "glass_detection",
    "glass_counting",
    "glass_localization",
    "glass_description",
    "scene_description",
    "reflection_recognition",
    "counterfactual_reasoning",
)

# The test split carries only the five open-ended evaluated tasks; binary
# glass_detection and the counterfactual regularizer stay train/val-only.
EVAL_TASKS = (
    "glass_counting",
    "glass_localization",
    "glass_description",
    "scene_description",
    "reflection_recognition",
)

CAPTION_VARIANTS = ("geometry", "spatial_relationship", "physical_signal_discrepancy")

CAPTION_SCHEMA = "polarkit.caption/v1"
INSTRUCTION_SCHEMA = "polarkit.instruction/v1"
SCENE_SCHEMA = "polarkit.scene/v1"


@dataclass
class SceneRecord:
    """Structured physical facts for one scene, the sole grounding for text."""

    scene_id: str
    scenario: str
    detections: list[Detection] = field(default_factory=list)
    spurious: list[Detection] = field(default_factory=list)
    persistent: list[Detection] = field(default_factory=list)
    # Summary of the reflection evidence (coverage_fraction, mean_dolp_inside,
    # mean_rgb_difference_inside, region_position) for reflection scenes.
    reflection_evidence: dict | None = None
    glass_instances: list[GlassInstanceStats] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.scenario == "reflection":
            if self.glass_instances:
                raise DataError(f"scene {self.scene_id}: reflection scenes carry no glass instances")
            if self.reflection_evidence is None:
                raise DataError(f"scene {self.scene_id}: reflection scenes need reflection evidence")
        else:
            if self.spurious or self.persistent or self.reflection_evidence is not None:
                raise DataError(
                    f"scene {self.scene_id}: transparent scenes carry only glass instances"
                )

    def as_dict(self) -> dict:
        return {
            "schema": SCENE_SCHEMA,
            "scene_id": self.scene_id,
            "scenario": self.scenario,
            "detections": [d.as_dict() for d in self.detections],
            "spurious": [d.as_dict() for d in self.spurious],
            "persistent": [d.as_dict() for d in self.persistent],
            "reflection_evidence": self.reflection_evidence,
            "glass_instances": [g.as_dict() for g in self.glass_instances],
            "provenance": self.provenance,
        }

    @staticmethod
    def from_dict(payload: dict) -> "SceneRecord":
        return SceneRecord(
            scene_id=str(payload["scene_id"]),
            scenario=str(payload["scenario"]),
            detections=[Detection.from_dict(d) for d in payload.get("detections", [])],
            spurious=[Detection.from_dict(d) for d in payload.get("spurious", [])],
            persistent=[Detection.from_dict(d) for d in payload.get("persistent", [])],
            reflection_evidence=payload.get("reflection_evidence"),
            glass_instances=[
                GlassInstanceStats.from_dict(g) for g in payload.get("glass_instances", [])
            ],
            provenance=payload.get("provenance", {}),
        )


@dataclass
class CaptionSample:
    scene_id: str
    scenario: str
    variant: str
    text: str
    split: str = ""

    def __post_init__(self):
        if self.variant not in CAPTION_VARIANTS:
            raise DataError(f"unknown caption variant {self.variant!r}")

    def as_dict(self) -> dict:
        return {
            "schema": CAPTION_SCHEMA,
            "scene_id": self.scene_id,
            "scenario": self.scenario,
            "variant": self.variant,
            "text": self.text,
            "split": self.split,
        }

    @staticmethod
    def from_dict(payload: dict) -> "CaptionSample":
        return CaptionSample(
            scene_id=str(payload["scene_id"]),
            scenario=str(payload["scenario"]),
            variant=str(payload["variant"]),
            text=str(payload["text"]),
            split=str(payload.get("split", "")),
        )


@dataclass
class InstructionSample:
    scene_id: str
    scenario: str
    task: str
    turns: list[tuple[str, str]]  # ordered (question, answer) pairs
    split: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        self.turns = [(str(q), str(a)) for q, a in self.turns]
        if self.split == "test" and self.task not in EVAL_TASKS:
            raise DataError(f"task {self.task} is excluded from the test split")

    def as_dict(self) -> dict:
        return {
            "schema": INSTRUCTION_SCHEMA,
            "scene_id": self.scene_id,
            "scenario": self.scenario,
            "task": self.task,
            "turns": [[q, a] for q, a in self.turns],
            "split": self.split,
        }

    @staticmethod
    def from_dict(payload: dict) -> "InstructionSample":
        return InstructionSample(
            scene_id=str(payload["scene_id"]),
            scenario=str(payload["scenario"]),
            task=str(payload["task"]),
            turns=[(q, a) for q, a in payload.get("turns", [])],
            split=str(payload.get("split", "")),
        )


@dataclass
class GenerationJob:
    """A fully rendered text-generation request.

    ``facts`` is the machine-readable twin of the [facts] block embedded in
    the prompt; verification reads it rather than re-deriving from text.
    """

    template_id: str
    scene_id: str
    prompt: str
    structured_facts: str
    facts: dict
    model: str = "stub"
    temperature: float = 0.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
