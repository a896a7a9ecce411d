"""Process reward models: JSON response parsing, an oracle judge and a chat judge."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping

from epo.backends.chat import ChatError, ChatServiceClient, render_history, render_strategies
from epo.core import PromptTemplate, Scenario, TemplateRole, Trajectory
from epo.envs.base import ProcessRewardLabel

log = logging.getLogger(__name__)

JSON_ONLY_REMINDER = (
    "Your previous answer could not be parsed. Output JSON only: one object with "
    'an integer list "indexes" and a string "reasoning".'
)


class PRMParseError(ValueError):
    """Judge output that does not yield a valid label. Carries the offending text."""

    def __init__(self, message: str, text: str, field_name: str | None = None):
        super().__init__(message)
        self.text = text
        self.field = field_name


@dataclass(frozen=True)
class LabelFailure:
    """Marker for a trajectory the judge could not label; it is excluded from training."""

    trajectory_id: str
    reason: str
    text: str = ""


def first_json_object(text: str) -> str | None:
    """The first balanced ``{...}`` span, skipping braces inside JSON strings."""
    start = text.find("{")
    while start != -1:
        depth, in_str, escaped = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def parse_prm_response(text: str, T: int) -> ProcessRewardLabel:
    span = first_json_object(text)
    if span is None:
        raise PRMParseError("no JSON object found in judge output", text)
    try:
        obj = json.loads(span)
    except json.JSONDecodeError as exc:
        raise PRMParseError(f"malformed JSON object: {exc.msg}", text) from None
    if not isinstance(obj, dict):
        raise PRMParseError("judge output is not a JSON object", text)
    for name in ("indexes", "reasoning"):
        if name not in obj:
            raise PRMParseError(f"missing required field {name!r}", text, name)
    raw, reasoning = obj["indexes"], obj["reasoning"]
    if not isinstance(raw, list) or any(isinstance(i, bool) or not isinstance(i, int) for i in raw):
        raise PRMParseError("field 'indexes' must be a list of integers", text, "indexes")
    if not isinstance(reasoning, str):
        raise PRMParseError("field 'reasoning' must be a string", text, "reasoning")
    bad = [i for i in raw if not 1 <= i <= T]
    if bad:
        raise PRMParseError(f"indexes {bad} outside [1, {T}]", text, "indexes")
    return ProcessRewardLabel(tuple(sorted(set(raw))), reasoning)


def render_prm_label(label: ProcessRewardLabel) -> str:
    return label.to_json()


class OraclePRM:
    """Programmatic judge backed by each environment's re-simulation rule."""

    kind = "oracle"

    def label(
        self, trajectory: Trajectory, scenario: Scenario, templates: Mapping[TemplateRole, PromptTemplate] | None = None
    ) -> ProcessRewardLabel:
        from epo.envs import get_env

        return get_env(scenario.env_id).oracle_label(trajectory, scenario)


class ChatPRM:
    """Chat-model judge. One retry with a JSON-only reminder, then a LabelFailure."""

    kind = "chat"

    def __init__(self, client: ChatServiceClient):
        self.client = client

    @staticmethod
    def render(trajectory: Trajectory, scenario: Scenario, template: PromptTemplate) -> str:
        history = [(t.observation, t.behavior) for t in trajectory.turns]
        return template.render(
            goal=scenario.goal_for(trajectory.participant_id).description,
            history=render_history(history),
            strategies=render_strategies([t.strategy for t in trajectory.strategist_turns]),
            score=f"{trajectory.final_score:g}",
        )

    def label(
        self, trajectory: Trajectory, scenario: Scenario, templates: Mapping[TemplateRole, PromptTemplate]
    ) -> ProcessRewardLabel | LabelFailure:
        system = self.render(trajectory, scenario, templates[TemplateRole.PRM_SYS])
        messages = [{"role": "system", "content": system}, {"role": "user", "content": "Select the critical strategies."}]
        reply = ""
        for attempt in range(2):
            try:
                reply = self.client.complete(messages)
            except ChatError as exc:
                log.warning("PRM request failed for %s: %s", trajectory.trajectory_id, exc)
                return LabelFailure(trajectory.trajectory_id, f"request failed: {exc}")
            try:
                return parse_prm_response(reply, trajectory.T)
            except PRMParseError as exc:
                log.warning("PRM parse failure %d for %s: %s", attempt + 1, trajectory.trajectory_id, exc)
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": JSON_ONLY_REMINDER},
                ]
                reason = str(exc)
        return LabelFailure(trajectory.trajectory_id, f"unparseable after retry: {reason}", reply)
