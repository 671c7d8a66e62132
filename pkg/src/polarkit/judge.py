"""Judge-based scoring of open-ended predictions and the sample-weighted
overall metric.

A judge model scores each (question, reference, prediction) triple on a 1-10
scale, repeated and averaged.  The overall score weights every sample
equally: sum of all per-sample scores over the total sample count.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .errors import DataError, UsageError
from .datagen.records import EVAL_TASKS

REPROMPT = (
    "Your previous reply could not be parsed. Grade the same prediction again "
    "and reply with only a single integer from 1 to 10."
)

_SCORE_RE = re.compile(r"(?<![\d.])(\d+)(?!\.?\d)")


@dataclass
class EvalSample:
    task: str
    question: str
    reference: str
    prediction: str
    sample_id: str = ""

    def __post_init__(self):
        if self.task not in EVAL_TASKS:
            raise UsageError(f"task {self.task!r} is not one of the evaluated tasks {EVAL_TASKS}")


@dataclass
class JudgedSample:
    sample: EvalSample
    scores: list[int] = field(default_factory=list)
    flagged: bool = False
    failure: str = ""

    def __post_init__(self):
        if any(not 1 <= s <= 10 for s in self.scores):
            raise DataError(f"judge scores must be integers in [1, 10], got {self.scores}")

    @property
    def final_score(self) -> float:
        if self.flagged or not self.scores:
            raise DataError("flagged or unscored sample has no final score")
        return sum(self.scores) / len(self.scores)


@lru_cache(maxsize=None)
def _prompt_template(task: str) -> str:
    path = resources.files("polarkit.data.judge_prompts").joinpath(f"{task}.txt")
    try:
        return path.read_text("utf-8")
    except FileNotFoundError:
        raise UsageError(f"no judging prompt registered for task {task!r}") from None


def build_judge_prompt(sample: EvalSample) -> str:
    template = _prompt_template(sample.task)
    return (
        template.replace("{question}", sample.question)
        .replace("{reference}", sample.reference)
        .replace("{prediction}", sample.prediction)
    )


def extract_score(text: str) -> int | None:
    """First standalone integer in [1, 10]; decimals do not count."""
    for m in _SCORE_RE.finditer(text):
        value = int(m.group(1))
        if 1 <= value <= 10:
            return value
    return None


def judge(sample: EvalSample, client, repeats: int = 3, model: str = "stub") -> JudgedSample:
    """Score one sample ``repeats`` times at temperature 0 and average.

    An unparseable response triggers one structured re-prompt; if that also
    fails to parse, the sample is flagged and excluded from aggregation.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    prompt = build_judge_prompt(sample)
    judged = JudgedSample(sample=sample)
    for _ in range(repeats):
        response = client.complete(prompt, model=model, temperature=0.0)
        score = extract_score(response)
        if score is None:
            response = client.complete(prompt + "\n\n" + REPROMPT, model=model, temperature=0.0)
            score = extract_score(response)
        if score is None:
            judged.flagged = True
            judged.failure = f"unparseable judge response: {response[:120]!r}"
            judged.scores = []
            return judged
        judged.scores.append(score)
    return judged


@dataclass
class TaskResult:
    mean: float
    count: int
    excluded: int = 0


@dataclass
class ResultTable:
    per_task: dict[str, TaskResult]
    overall: float
    total_count: int
    total_excluded: int

    def as_dict(self) -> dict:
        return {
            "per_task": {
                t: {"mean": r.mean, "count": r.count, "excluded": r.excluded}
                for t, r in self.per_task.items()
            },
            "overall": self.overall,
            "total_count": self.total_count,
            "total_excluded": self.total_excluded,
        }


def aggregate(judged: list[JudgedSample]) -> ResultTable:
    """Per-task means plus the exact sample-weighted overall.

    Flagged samples are excluded from every mean; their counts are disclosed
    per task and in total.
    """
    valid = [j for j in judged if not j.flagged]
    excluded: dict[str, int] = {}
    for j in judged:
        if j.flagged:
            excluded[j.sample.task] = excluded.get(j.sample.task, 0) + 1
    if not valid:
        raise DataError("no valid judged samples to aggregate")

    by_task: dict[str, list[float]] = {}
    for j in valid:
        by_task.setdefault(j.sample.task, []).append(j.final_score)

    per_task = {
        task: TaskResult(
            mean=sum(scores) / len(scores),
            count=len(scores),
            excluded=excluded.get(task, 0),
        )
        for task, scores in sorted(by_task.items())
    }
    for task, n in excluded.items():
        per_task.setdefault(task, TaskResult(mean=float("nan"), count=0, excluded=n))

    all_scores = [j.final_score for j in valid]
    return ResultTable(
        per_task=per_task,
        overall=sum(all_scores) / len(all_scores),
        total_count=len(all_scores),
        total_excluded=len(judged) - len(valid),
    )


def render_result_table(table: ResultTable) -> str:
    """Aligned-column report: one column per task plus Overall."""
    tasks = list(table.per_task)
    headers = tasks + ["Overall"]
    means = [
        f"{table.per_task[t].mean:.2f}" if table.per_task[t].count else "--" for t in tasks
    ] + [f"{table.overall:.2f}"]
    counts = [str(table.per_task[t].count) for t in tasks] + [str(table.total_count)]
    widths = [max(len(h), len(m), len(c)) for h, m, c in zip(headers, means, counts)]

    def _row(label: str, cells: list[str]) -> str:
        return "  ".join([f"{label:<8}"] + [c.rjust(w) for c, w in zip(cells, widths)])

    lines = [_row("task", headers), _row("mean", means), _row("n", counts)]
    if table.total_excluded:
        lines.append(f"excluded:  {table.total_excluded} flagged sample(s) not in any mean")
    return "\n".join(lines)


class StubJudgeClient:
    """Deterministic judge: the score is a stable hash of the prompt."""

    def complete(self, prompt: str, model: str = "stub", temperature: float = 0.0) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        score = 1 + int(digest[:8], 16) % 10
        return f"Score: {score}. Graded deterministically from the payload digest."
