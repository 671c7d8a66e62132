"""Rule-based verification of generated text.

Rejection is a value, not an exception: every reject carries machine-readable
reason codes (e.g. ``lexical.color_term:red``) so rejection statistics stay
analyzable across runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .lexicon import lexicon_hits, lexicon_version
from .records import CAPTION_VARIANTS, GenerationJob
from .templates import get_template

_VARIANT_RE = re.compile(r"^\[([a-z_]+)\]\s*(.*)$")
_DIGITS_RE = re.compile(r"(?<![\d.])(\d+)(?!\.?\d)")

_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
    "thirteen": 13, "fourteen": 14, "fifteen": 15, "sixteen": 16,
    "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50, "sixty": 60,
    "seventy": 70, "eighty": 80, "ninety": 90,
}

DENIAL_MARKERS = (
    "not physically present",
    "not actually present",
    "not actually there",
    "does not physically exist",
    "does not exist",
    "only as a reflection",
    "only a reflection",
    "merely a reflection",
    "is a reflection",
    "solely as reflected",
    "exists solely in the reflection",
    "no physical",
    "not real",
)


def parse_count(text: str) -> int | None:
    """First stated count in the text: a digit group or an English number
    word (zero through one hundred, compounds included), whichever appears
    earliest."""
    lowered = text.lower()
    tokens = [(m.start(), m.group(0)) for m in re.finditer(r"[a-z]+", lowered)]

    word_candidate: tuple[int, int] | None = None
    for idx, (pos, tok) in enumerate(tokens):
        nxt = tokens[idx + 1][1] if idx + 1 < len(tokens) else ""
        if tok in ("a", "an") and nxt == "hundred":
            word_candidate = (pos, 100)
        elif tok in _TENS:
            value = _TENS[tok]
            if nxt in _UNITS and 0 < _UNITS[nxt] < 10:
                value += _UNITS[nxt]
            word_candidate = (pos, value)
        elif tok in _UNITS:
            value = 100 if (tok == "one" and nxt == "hundred") else _UNITS[tok]
            word_candidate = (pos, value)
        if word_candidate:
            break

    digit_candidate: tuple[int, int] | None = None
    m = _DIGITS_RE.search(lowered)
    if m:
        digit_candidate = (m.start(), int(m.group(1)))

    candidates = [c for c in (word_candidate, digit_candidate) if c is not None]
    if not candidates:
        return None
    return min(candidates)[1]


@dataclass
class VerifyRules:
    caption_min_words: int = 12
    caption_max_words: int = 60
    answer_min_words: int = 8
    answer_max_words: int = 120
    question_min_words: int = 4

    def as_dict(self) -> dict:
        return {
            "caption_words": [self.caption_min_words, self.caption_max_words],
            "answer_words": [self.answer_min_words, self.answer_max_words],
            "question_min_words": self.question_min_words,
            "lexicon_version": lexicon_version(),
        }


DEFAULT_RULES = VerifyRules()


@dataclass
class VerificationResult:
    accepted: bool
    reasons: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.accepted


def parse_caption_response(text: str) -> dict[str, str]:
    """Extract '[variant] caption' lines into a variant -> caption map."""
    captions: dict[str, str] = {}
    for line in text.splitlines():
        m = _VARIANT_RE.match(line.strip())
        if m and m.group(1) in CAPTION_VARIANTS:
            captions[m.group(1)] = m.group(2).strip()
    return captions


def parse_instruction_response(text: str) -> list[tuple[str, str]]:
    """Extract ordered (question, answer) turns from 'Q:'/'A:' lines."""
    turns: list[tuple[str, str]] = []
    question: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("Q:"):
            question = stripped[2:].strip()
        elif stripped.startswith("A:"):
            turns.append((question or "", stripped[2:].strip()))
            question = None
    if question is not None:
        turns.append((question, ""))
    return turns


def _word_count(text: str) -> int:
    return len(text.split())


def verify(response: str, job: GenerationJob, rules: VerifyRules = DEFAULT_RULES) -> VerificationResult:
    """Check one response against the rules for its template family."""
    spec = get_template(job.template_id)
    reasons: list[str] = []
    if spec.kind == "captions":
        _verify_captions(response, job, rules, reasons)
    else:
        _verify_instruction(response, job, spec.task, rules, reasons)
    return VerificationResult(accepted=not reasons, reasons=reasons)


def _verify_captions(response: str, job: GenerationJob, rules: VerifyRules, reasons: list[str]) -> None:
    captions = parse_caption_response(response)
    for variant in CAPTION_VARIANTS:
        if variant not in captions or not captions[variant]:
            reasons.append(f"structural.missing_variant:{variant}")
            continue
        n = _word_count(captions[variant])
        if not rules.caption_min_words <= n <= rules.caption_max_words:
            reasons.append(f"structural.length:{variant}:{n}")
        for hit in lexicon_hits(captions[variant], ("colors",)):
            reasons.append(f"lexical.color_term:{hit}")
        for hit in lexicon_hits(captions[variant], ("textures",)):
            reasons.append(f"lexical.texture_term:{hit}")
        for hit in lexicon_hits(captions[variant], ("text_reading",)):
            reasons.append(f"lexical.readable_text_claim:{hit}")


def _verify_instruction(
    response: str, job: GenerationJob, task: str, rules: VerifyRules, reasons: list[str]
) -> None:
    turns = parse_instruction_response(response)
    if not turns:
        reasons.append("structural.missing_turn")
        return
    for k, (question, answer) in enumerate(turns):
        if not question:
            reasons.append(f"structural.missing_question:{k}")
        elif _word_count(question) < rules.question_min_words:
            reasons.append(f"structural.question_length:{k}:{_word_count(question)}")
        if not answer:
            reasons.append(f"structural.missing_answer:{k}")
        else:
            n = _word_count(answer)
            if not rules.answer_min_words <= n <= rules.answer_max_words:
                reasons.append(f"structural.length:{k}:{n}")
    if reasons:
        return

    if task == "glass_counting":
        expected = int(job.facts.get("glass_count", "0"))
        stated = parse_count(turns[0][1])
        if stated is None:
            reasons.append("numeric.count_missing")
        elif stated != expected:
            reasons.append(f"numeric.count_mismatch:stated={stated}:expected={expected}")
    elif task == "counterfactual_reasoning":
        answer = turns[0][1].lower()
        spurious = [s.lower() for s in job.facts.get("spurious_objects", [])]
        if spurious and not any(s in answer for s in spurious):
            reasons.append("counterfactual.object_unreferenced")
        denied = any(marker in answer for marker in DENIAL_MARKERS)
        affirmed = answer.startswith("yes")
        if affirmed or not denied:
            reasons.append("counterfactual.presence_asserted")
