"""Scene-disjoint split composition.

Targets are per-split cell counts, where a cell is a scenario name or "any":

    {"train": {"reflection": 16800, "transparent": 8400},
     "val":   {"reflection": 2100,  "transparent": 1200}}

A scene's samples always land in one split.  Splits fill in the order test,
val, train: the test split is the most constrained (only evaluated tasks are
eligible), so it gets first pick of the shuffled scene pool.
"""

from __future__ import annotations

import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..errors import CompositionError, DataError, UsageError
from .records import EVAL_TASKS, SCENARIOS, CaptionSample, InstructionSample

SPLIT_FILL_ORDER = ("test", "val", "train")


@dataclass
class _Scene:
    scene_id: str
    scenario: str
    samples: list
    tasks: set = field(default_factory=set)

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def test_eligible(self) -> bool:
        return all(t in EVAL_TASKS for t in self.tasks)


@dataclass
class CompositionReport:
    total: int
    by_split: dict
    by_split_scenario: dict
    by_split_task: dict
    by_split_variant: dict

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "by_split": dict(self.by_split),
            "by_split_scenario": {k: dict(v) for k, v in self.by_split_scenario.items()},
            "by_split_task": {k: dict(v) for k, v in self.by_split_task.items()},
            "by_split_variant": {k: dict(v) for k, v in self.by_split_variant.items()},
        }


def composition_report(samples) -> CompositionReport:
    by_split: Counter = Counter()
    by_scenario: dict = defaultdict(Counter)
    by_task: dict = defaultdict(Counter)
    by_variant: dict = defaultdict(Counter)
    for s in samples:
        by_split[s.split] += 1
        by_scenario[s.split][s.scenario] += 1
        if isinstance(s, InstructionSample):
            by_task[s.split][s.task] += 1
        elif isinstance(s, CaptionSample):
            by_variant[s.split][s.variant] += 1
    return CompositionReport(
        total=sum(by_split.values()),
        by_split=dict(by_split),
        by_split_scenario={k: dict(v) for k, v in by_scenario.items()},
        by_split_task={k: dict(v) for k, v in by_task.items()},
        by_split_variant={k: dict(v) for k, v in by_variant.items()},
    )


def verify_scene_disjoint(samples) -> None:
    """Raise if any scene id spans more than one split."""
    seen: dict[str, str] = {}
    for s in samples:
        prior = seen.setdefault(s.scene_id, s.split)
        if prior != s.split:
            raise DataError(f"scene {s.scene_id} spans splits {prior!r} and {s.split!r}")


def _validate_targets(targets: dict) -> dict:
    if not isinstance(targets, dict) or not targets:
        raise UsageError("split targets must be a non-empty mapping")
    cleaned: dict = {}
    for split, cells in targets.items():
        if split not in SPLIT_FILL_ORDER:
            raise UsageError(f"unknown split {split!r}; expected train/val/test")
        if not isinstance(cells, dict) or not cells:
            raise UsageError(f"split {split!r} needs a mapping of cell -> count")
        keys = set(cells)
        if "any" in keys and len(keys) > 1:
            raise UsageError(f"split {split!r} mixes 'any' with scenario cells")
        for cell, count in cells.items():
            if cell != "any" and cell not in SCENARIOS:
                raise UsageError(f"unknown target cell {cell!r}")
            if int(count) < 0:
                raise UsageError(f"negative target for {split}/{cell}")
        cleaned[split] = {cell: int(count) for cell, count in cells.items()}
    return cleaned


def compose_splits(samples, targets: dict, seed: int = 0):
    """Assign scene-disjoint splits matching the per-cell targets exactly.

    Deterministic for a fixed seed.  Raises CompositionError carrying the
    per-cell shortfall when the accepted pool cannot satisfy the targets.
    """
    targets = _validate_targets(targets)

    scenes: dict[str, _Scene] = {}
    for s in samples:
        scene = scenes.get(s.scene_id)
        if scene is None:
            scene = scenes[s.scene_id] = _Scene(scene_id=s.scene_id, scenario=s.scenario, samples=[])
        elif scene.scenario != s.scenario:
            raise DataError(f"scene {s.scene_id} appears with two scenarios")
        scene.samples.append(s)
        if isinstance(s, InstructionSample):
            scene.tasks.add(s.task)

    order = sorted(scenes)
    random.Random(seed).shuffle(order)
    unassigned = set(order)
    assignment: dict[str, str] = {}
    shortfall: dict[str, int] = {}

    for split in SPLIT_FILL_ORDER:
        if split not in targets:
            continue
        for cell in sorted(targets[split]):
            remaining = targets[split][cell]
            if remaining == 0:
                continue
            for scene_id in order:
                if remaining == 0:
                    break
                if scene_id not in unassigned:
                    continue
                scene = scenes[scene_id]
                if cell != "any" and scene.scenario != cell:
                    continue
                if split == "test" and not scene.test_eligible:
                    continue
                if scene.size > remaining:
                    continue
                assignment[scene_id] = split
                unassigned.discard(scene_id)
                remaining -= scene.size
            if remaining:
                shortfall[f"{split}/{cell}"] = remaining

    if shortfall:
        detail = ", ".join(f"{cell}: short {n}" for cell, n in sorted(shortfall.items()))
        err = CompositionError(f"split targets are infeasible ({detail})")
        err.shortfall = shortfall
        raise err

    composed = []
    for scene_id, split in assignment.items():
        for s in scenes[scene_id].samples:
            s.split = split
            composed.append(s)
    composed.sort(key=lambda s: (s.split, s.scene_id, getattr(s, "variant", ""), getattr(s, "task", "")))
    verify_scene_disjoint(composed)
    return composed, composition_report(composed)
