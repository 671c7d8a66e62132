from .client import HttpChatClient, RetryPolicy, StubClient
from .compose import CompositionReport, compose_splits, verify_scene_disjoint
from .generate import assemble_prompt, generate, render_structured_facts
from .pipeline import GenerationOutcome, run_generation, template_ids_for
from .records import (
    CAPTION_VARIANTS,
    EVAL_TASKS,
    TASKS,
    CaptionSample,
    GenerationJob,
    InstructionSample,
    SceneRecord,
)
from .templates import TEMPLATE_IDS, get_template
from .verify import VerificationResult, VerifyRules, parse_count, verify

__all__ = [
    "CAPTION_VARIANTS",
    "CaptionSample",
    "CompositionReport",
    "EVAL_TASKS",
    "GenerationJob",
    "GenerationOutcome",
    "HttpChatClient",
    "InstructionSample",
    "RetryPolicy",
    "SceneRecord",
    "StubClient",
    "TASKS",
    "TEMPLATE_IDS",
    "VerificationResult",
    "VerifyRules",
    "assemble_prompt",
    "compose_splits",
    "generate",
    "get_template",
    "parse_count",
    "render_structured_facts",
    "run_generation",
    "template_ids_for",
    "verify",
    "verify_scene_disjoint",
]
