"""Text-generation client abstraction.

Everything external (the caption/instruction writer and the judge) speaks a
chat-completion-style interface: ``complete(prompt, model=..., temperature=...)
-> str``.  A deterministic stub that fills answers from the structured facts
embedded in the prompt is always available, so the whole pipeline runs with
no network or keys.
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass

from ..errors import TransportError, UsageError

_FACTS_RE = re.compile(r"\[facts\]\n(.*?)\n\[/facts\]", re.DOTALL)
_TASK_RE = re.compile(r"^\[task\] (\S+)", re.MULTILINE)


@dataclass(frozen=True)
class RetryPolicy:
    """Bounded retries with exponential backoff on transient failures.

    ``max_attempts`` counts every attempt, including the first.
    """

    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0

    def delay(self, attempt: int) -> float:
        return self.backoff_base * self.backoff_factor ** (attempt - 1)


def parse_facts_block(prompt: str) -> dict:
    """Recover the structured facts embedded in a rendered prompt."""
    m = _FACTS_RE.search(prompt)
    if not m:
        raise UsageError("prompt carries no [facts] block")
    facts: dict = {}
    instances = []
    for line in m.group(1).splitlines():
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key.startswith("glass_instance_"):
            inst = {}
            for part in value.split(";"):
                k, _, v = part.partition("=")
                inst[k.strip()] = v.strip()
            instances.append(inst)
        elif key in ("objects", "spurious_objects", "persistent_objects"):
            facts[key] = [v.strip() for v in value.split("|") if v.strip()] if value else []
        else:
            facts[key] = value
    if instances:
        facts["instances"] = instances
    return facts


def _fmt_pct(fraction_text: str) -> str:
    try:
        return f"{100.0 * float(fraction_text):.1f}"
    except ValueError:
        return "0.0"


class StubClient:
    """Deterministic template-filling client: same prompt, same bytes out."""

    def complete(self, prompt: str, model: str = "stub", temperature: float = 0.0) -> str:
        facts = parse_facts_block(prompt)
        task_match = _TASK_RE.search(prompt)
        if task_match:
            return self._instruction_response(task_match.group(1), facts)
        return self._caption_response(facts)

    # -- captions ----------------------------------------------------------

    def _caption_response(self, facts: dict) -> str:
        if facts.get("scenario") == "reflection":
            return self._reflection_captions(facts)
        return self._glass_captions(facts)

    def _reflection_captions(self, facts: dict) -> str:
        pct = _fmt_pct(facts.get("coverage_fraction", "0"))
        position = facts.get("region_position", "center")
        dolp = facts.get("mean_dolp", "0")
        diff = facts.get("mean_rgb_difference", "0")
        objects = facts.get("objects", [])
        if objects:
            spatial = (
                f"[spatial_relationship] The reflective region sits at the {position} of the frame, "
                f"while recorded objects such as {objects[0]} occupy the surrounding area where the "
                "polarization degree stays near the scene baseline."
            )
        else:
            spatial = (
                f"[spatial_relationship] The reflective region sits at the {position} of the frame, "
                "and no persistent objects are recorded around it, leaving the remainder of the scene "
                "at baseline polarization levels."
            )
        return "\n".join(
            [
                (
                    f"[geometry] A contiguous reflective surface occupies about {pct} percent of the "
                    "frame, and the polarization response traces its flat extent cleanly, separating "
                    "it from the lower-signal background that surrounds it."
                ),
                spatial,
                (
                    f"[physical_signal_discrepancy] Inside the region the mean degree of polarization "
                    f"reaches {dolp}, well above the surroundings, and the paired captures differ by "
                    f"{diff} on average, which together mark reflected rather than body-scattered light."
                ),
            ]
        )

    def _glass_captions(self, facts: dict) -> str:
        instances = facts.get("instances", [])
        count = facts.get("glass_count", str(len(instances)))
        positions = ", ".join(i.get("position", "center") for i in instances) or "none"
        means = ", ".join(i.get("dolp_mean", "0") for i in instances) or "0"
        return "\n".join(
            [
                (
                    f"[geometry] The scene contains {count} glass instances whose polarization degree "
                    "forms coherent surface patches with sharply bounded extents, revealing plate-like "
                    "geometry that intensity measurements alone would leave undetected."
                ),
                (
                    f"[spatial_relationship] Across the frame the glass instances occupy the {positions} "
                    "regions respectively, and their extents stay separate, which keeps each surface "
                    "individually distinguishable in the polarization field."
                ),
                (
                    f"[physical_signal_discrepancy] Each glass instance raises the local degree of "
                    f"polarization relative to its surroundings, with per-instance mean responses of "
                    f"{means}, a signature of partially polarized transmission and surface reflection."
                ),
            ]
        )

    # -- instructions ------------------------------------------------------

    def _instruction_response(self, task: str, facts: dict) -> str:
        handler = {
            "glass_detection": self._glass_detection,
            "glass_counting": self._glass_counting,
            "glass_localization": self._glass_localization,
            "glass_description": self._glass_description,
            "scene_description": self._scene_description,
            "reflection_recognition": self._reflection_recognition,
            "counterfactual_reasoning": self._counterfactual,
        }.get(task)
        if handler is None:
            raise UsageError(f"stub client has no handler for task {task!r}")
        return handler(facts)

    def _glass_detection(self, facts: dict) -> str:
        count = int(facts.get("glass_count", "0"))
        if count:
            answer = (
                f"Yes. The polarization measurements identify {count} glass instances, each forming "
                "a coherent region of elevated polarization degree that intensity imagery alone "
                "would miss."
            )
        else:
            answer = (
                "No. The polarization measurements identify no glass instances here; the degree of "
                "polarization stays near the scene baseline everywhere."
            )
        return f"Q: Does this scene contain any glass surfaces?\nA: {answer}"

    def _glass_counting(self, facts: dict) -> str:
        count = facts.get("glass_count", "0")
        return (
            "Q: How many glass instances are present in this scene?\n"
            f"A: There are {count} glass instances in the scene, each one resolved as a distinct "
            "region of elevated polarization degree."
        )

    def _glass_localization(self, facts: dict) -> str:
        instances = facts.get("instances", [])
        where = "; ".join(
            f"instance {k + 1} at the {inst.get('position', 'center')}" for k, inst in enumerate(instances)
        )
        return (
            "Q: Where are the glass instances located in this scene?\n"
            f"A: The polarization evidence places them as follows: {where}. Each region shows the "
            "elevated polarization degree typical of glass surfaces."
        )

    def _glass_description(self, facts: dict) -> str:
        instances = facts.get("instances", [])
        details = " ".join(
            (
                f"Instance {k + 1} sits at the {inst.get('position', 'center')} covering "
                f"{inst.get('area_px', '0')} pixels with a mean polarization degree of "
                f"{inst.get('dolp_mean', '0')}."
            )
            for k, inst in enumerate(instances)
        )
        return (
            "Q: Describe the glass present in this scene.\n"
            f"A: The scene holds {facts.get('glass_count', '0')} glass instances. {details} Their "
            "elevated polarization statistics distinguish them from the background."
        )

    def _scene_description(self, facts: dict) -> str:
        objects = facts.get("objects", [])
        listed = ", ".join(objects) if objects else "no recorded objects"
        pct = _fmt_pct(facts.get("coverage_fraction", "0"))
        position = facts.get("region_position", "center")
        spurious = facts.get("spurious_objects", [])
        tail = (
            f" Content mirrored there, such as the {spurious[0]}, is reflected imagery rather than a "
            "physically present object." if spurious else ""
        )
        return (
            "Q: Can you describe this scene for me?\n"
            f"A: The scene shows {listed}. A reflective area covering about {pct} percent of the "
            f"frame sits at the {position}, where the polarization degree rises well above its "
            f"surroundings.{tail}"
        )

    def _reflection_recognition(self, facts: dict) -> str:
        pct = _fmt_pct(facts.get("coverage_fraction", "0"))
        position = facts.get("region_position", "center")
        dolp = facts.get("mean_dolp", "0")
        return (
            "Q: Where do reflections appear in this scene, and how can you tell?\n"
            f"A: Reflections concentrate at the {position} of the frame, covering roughly {pct} "
            f"percent of it; the degree of polarization there averages {dolp}, far above the diffuse "
            "surroundings, which is the physical signature of reflected light."
        )

    def _counterfactual(self, facts: dict) -> str:
        spurious = facts.get("spurious_objects", [])
        label = spurious[0] if spurious else "object"
        dolp = facts.get("mean_dolp", "0")
        return (
            f"Q: I can clearly see a {label} in this scene. What can you tell me about it?\n"
            f"A: That {label} is not physically present: it appears only as a reflection. The region "
            f"carrying it shows a mean polarization degree of {dolp}, typical of mirrored light, so "
            f"the {label} exists solely as reflected imagery."
        )


class ScriptedClient:
    """Test helper: replays queued responses or raises queued exceptions."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def complete(self, prompt: str, model: str = "stub", temperature: float = 0.0) -> str:
        self.calls += 1
        if not self.script:
            raise TransportError("scripted client exhausted")
        item = self.script.pop(0)
        if isinstance(item, BaseException):
            raise item
        return item


class HttpChatClient:
    """Minimal chat-completion HTTP client (text-only payloads).

    The API key comes from an environment variable; images are never sent.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "POLARKIT_API_KEY",
        timeout: float = 60.0,
        opener=None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._opener = opener or urllib.request.urlopen

    def build_request(self, prompt: str, model: str, temperature: float) -> urllib.request.Request:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise UsageError(f"environment variable {self.api_key_env} is not set")
        body = json.dumps(
            {
                "model": model,
                "temperature": temperature,
                "messages": [{"role": "user", "content": prompt}],
            }
        ).encode("utf-8")
        return urllib.request.Request(
            self.endpoint,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {key}",
            },
            method="POST",
        )

    def complete(self, prompt: str, model: str, temperature: float = 0.0) -> str:
        request = self.build_request(prompt, model, temperature)
        try:
            with self._opener(request, timeout=self.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except urllib.error.URLError as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise TransportError(f"chat endpoint returned malformed JSON: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected chat response shape: {payload!r}") from exc
