"""Domain types shared by every stage of the pipeline, plus JSONL persistence.

All types are frozen dataclasses validated on construction, so a value that
exists is a valid value. Trajectories serialize to one JSON object per line
with a fixed field layout (see ``trajectory_to_dict``).
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


class ValidationError(ValueError):
    """An invariant of a domain type does not hold. ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class TrajectoryFileError(ValueError):
    """A trajectory file could not be parsed; carries the 1-based line number."""

    def __init__(self, path: str | os.PathLike, line: int, message: str, field_name: str | None = None):
        where = f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.field = field_name


class TrajectoryWriteError(OSError):
    def __init__(self, path: str | os.PathLike, written: int, cause: BaseException):
        super().__init__(f"failed writing {path} after {written} trajectories: {cause}")
        self.path = str(path)
        self.written = written
        self.__cause__ = cause


class Source(str, Enum):
    ENVIRONMENT = "environment"
    PARTNER = "partner"


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Goal:
    agent_id: str
    description: str
    score_spec: str
    # private numeric data for the scorer (targets, required attributes, ...)
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.agent_id:
            raise ValidationError("agent_id", "must be non-empty")
        if not self.description or not self.description.strip():
            raise ValidationError("description", "must be non-empty")


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    context: str
    goals: tuple[Goal, ...]
    env_id: str
    max_turns: int
    # public environment data (listing, layout, ...); never holds a goal
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "goals", tuple(self.goals))
        if not 1 <= len(self.goals) <= 2:
            raise ValidationError("goals", f"expected 1 or 2 participants, got {len(self.goals)}")
        ids = [g.agent_id for g in self.goals]
        if len(set(ids)) != len(ids):
            raise ValidationError("goals", f"duplicate agent_id in {ids}")
        if not isinstance(self.max_turns, int) or self.max_turns < 1:
            raise ValidationError("max_turns", f"must be a positive integer, got {self.max_turns!r}")

    @property
    def participant_ids(self) -> list[str]:
        return [g.agent_id for g in self.goals]

    def goal_for(self, participant_id: str) -> Goal:
        for goal in self.goals:
            if goal.agent_id == participant_id:
                return goal
        raise KeyError(f"no participant {participant_id!r} in scenario {self.scenario_id!r}")

    def participant_view(self, participant_id: str) -> str:
        """Serialized view for one participant: public context plus only its own goal."""
        goal = self.goal_for(participant_id)
        return json.dumps(
            {
                "scenario_id": self.scenario_id,
                "env_id": self.env_id,
                "context": self.context,
                "participant_id": participant_id,
                "goal": goal.description,
                "max_turns": self.max_turns,
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class Observation:
    turn_index: int
    source: Source
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", Source(self.source))
        if not isinstance(self.turn_index, int) or isinstance(self.turn_index, bool) or self.turn_index < 1:
            raise ValidationError("turn_index", f"must be a 1-based integer, got {self.turn_index!r}")


@dataclass(frozen=True)
class Strategy:
    tokens: tuple[str | int, ...]
    token_logprobs: tuple[float, ...] | None = None
    rendered: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValidationError("tokens", "strategy must have at least one token")
        for tok in self.tokens:
            if isinstance(tok, bool) or not isinstance(tok, (str, int)):
                raise ValidationError("tokens", f"token must be str or int, got {tok!r}")
        if self.token_logprobs is not None:
            lps = tuple(float(x) for x in self.token_logprobs)
            object.__setattr__(self, "token_logprobs", lps)
            if len(lps) != len(self.tokens):
                raise ValidationError(
                    "token_logprobs", f"length {len(lps)} != number of tokens {len(self.tokens)}"
                )
            for lp in lps:
                if math.isnan(lp) or lp > 0.0:
                    raise ValidationError("token_logprobs", f"log-probability must be <= 0, got {lp}")
        if not self.rendered:
            object.__setattr__(self, "rendered", " ".join(str(t) for t in self.tokens))

    @property
    def k(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Behavior:
    content: str
    actor_id: str

    def __post_init__(self) -> None:
        if not isinstance(self.content, str) or not self.content.strip():
            raise ValidationError("behavior", "must be non-empty")


@dataclass(frozen=True)
class Turn:
    observation: Observation
    behavior: Behavior
    strategy: Strategy | None = None
    process_reward: float | None = None

    def __post_init__(self) -> None:
        if self.process_reward is not None:
            r = self.process_reward
            if isinstance(r, bool) or not isinstance(r, (int, float)) or float(r) not in (0.0, 1.0):
                raise ValidationError("process_reward", f"must be exactly 0.0 or 1.0, got {r!r}")
            object.__setattr__(self, "process_reward", float(r))


@dataclass(frozen=True)
class Trajectory:
    trajectory_id: str
    scenario_id: str
    participant_id: str
    turns: tuple[Turn, ...]
    terminal: bool
    final_score: float
    policy_version: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.policy_version:
            raise ValidationError("policy_version", "must be non-empty")
        if isinstance(self.final_score, bool) or not math.isfinite(float(self.final_score)):
            raise ValidationError("final_score", f"must be a finite real, got {self.final_score!r}")
        object.__setattr__(self, "final_score", float(self.final_score))
        last = 0
        for turn in self.turns:
            if turn.observation.turn_index <= last:
                raise ValidationError(
                    "turn_index", f"not strictly increasing ({turn.observation.turn_index} after {last})"
                )
            last = turn.observation.turn_index

    @property
    def strategist_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.strategy is not None]

    @property
    def T(self) -> int:
        """Number of turns on which the strategist proposed a strategy."""
        return sum(1 for t in self.turns if t.strategy is not None)

    @property
    def process_rewards(self) -> list[float | None]:
        return [t.process_reward for t in self.turns if t.strategy is not None]

    def with_process_rewards(self, rewards: Sequence[float]) -> Trajectory:
        """Copy with r_t filled on strategist turns (in order)."""
        if len(rewards) != self.T:
            raise ValidationError("process_reward", f"expected {self.T} rewards, got {len(rewards)}")
        it = iter(rewards)
        turns = tuple(
            replace(t, process_reward=next(it)) if t.strategy is not None else t for t in self.turns
        )
        return replace(self, turns=turns)

    def check_score_range(self, low: float, high: float) -> None:
        if not low <= self.final_score <= high:
            raise ValidationError("final_score", f"{self.final_score} outside [{low}, {high}]")


# ---------------------------------------------------------------------------
# Prompt templates


class TemplateRole(str, Enum):
    STRATEGIST_SYS = "strategist_sys"
    ACTOR_SYS = "actor_sys"
    PRM_SYS = "prm_sys"


ROLE_PLACEHOLDERS: dict[TemplateRole, frozenset[str]] = {
    TemplateRole.STRATEGIST_SYS: frozenset({"goal", "history", "strategies", "observation"}),
    TemplateRole.ACTOR_SYS: frozenset({"goal", "history", "strategies", "observation"}),
    TemplateRole.PRM_SYS: frozenset({"goal", "history", "strategies", "score"}),
}
_PLACEHOLDER = re.compile(r"\{(goal|history|strategies|score|observation)\}")


@dataclass(frozen=True)
class PromptTemplate:
    role: TemplateRole
    template: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", TemplateRole(self.role))
        missing = ROLE_PLACEHOLDERS[self.role] - self.placeholders
        if missing:
            raise ValidationError("template", f"{self.role.value} template lacks placeholders {sorted(missing)}")

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.template))

    def render(self, **values: Any) -> str:
        # Only the named placeholders are substituted; other braces (JSON
        # schemas in the PRM prompt) pass through untouched.
        missing = ROLE_PLACEHOLDERS[self.role] - values.keys()
        if missing:
            raise KeyError(f"missing values for {sorted(missing)}")
        return _PLACEHOLDER.sub(lambda m: str(values.get(m.group(1), m.group(0))), self.template)


def load_templates(env_id: str) -> dict[TemplateRole, PromptTemplate]:
    base = resources.files("epo") / "prompts" / env_id
    out = {}
    for role in TemplateRole:
        text = (base / f"{role.value}.txt").read_text(encoding="utf-8")
        out[role] = PromptTemplate(role, text)
    return out


# ---------------------------------------------------------------------------
# JSONL persistence


def trajectory_to_dict(traj: Trajectory) -> dict[str, Any]:
    return {
        "trajectory_id": traj.trajectory_id,
        "scenario_id": traj.scenario_id,
        "participant_id": traj.participant_id,
        "policy_version": traj.policy_version,
        "terminal": traj.terminal,
        "final_score": traj.final_score,
        "turns": [
            {
                "turn_index": t.observation.turn_index,
                "source": t.observation.source.value,
                "observation": t.observation.content,
                "strategy": None
                if t.strategy is None
                else {
                    "tokens": list(t.strategy.tokens),
                    "token_logprobs": None
                    if t.strategy.token_logprobs is None
                    else list(t.strategy.token_logprobs),
                    "rendered": t.strategy.rendered,
                },
                "behavior": t.behavior.content,
                "process_reward": t.process_reward,
            }
            for t in traj.turns
        ],
    }


_TOP_FIELDS = ("trajectory_id", "scenario_id", "participant_id", "policy_version", "terminal", "final_score", "turns")
_TURN_FIELDS = ("turn_index", "source", "observation", "strategy", "behavior", "process_reward")


def trajectory_from_dict(d: Mapping[str, Any]) -> Trajectory:
    if not isinstance(d, Mapping):
        raise ValidationError("trajectory", "expected a JSON object")
    for name in _TOP_FIELDS:
        if name not in d:
            raise ValidationError(name, "missing field")
    if not isinstance(d["terminal"], bool):
        raise ValidationError("terminal", "must be a boolean")
    if not isinstance(d["turns"], list):
        raise ValidationError("turns", "must be a list")
    turns = []
    pid = d["participant_id"]
    for raw in d["turns"]:
        if not isinstance(raw, Mapping):
            raise ValidationError("turns", "each turn must be an object")
        for name in _TURN_FIELDS:
            if name not in raw:
                raise ValidationError(name, "missing field")
        try:
            source = Source(raw["source"])
        except ValueError:
            raise ValidationError("source", f"unknown source {raw['source']!r}") from None
        strat = raw["strategy"]
        strategy = None
        if strat is not None:
            if not isinstance(strat, Mapping) or "tokens" not in strat:
                raise ValidationError("strategy", "must be null or an object with tokens")
            strategy = Strategy(
                tokens=tuple(strat["tokens"]),
                token_logprobs=None if strat.get("token_logprobs") is None else tuple(strat["token_logprobs"]),
                rendered=strat.get("rendered", ""),
            )
        turns.append(
            Turn(
                observation=Observation(raw["turn_index"], source, raw["observation"]),
                behavior=Behavior(raw["behavior"], pid),
                strategy=strategy,
                process_reward=raw["process_reward"],
            )
        )
    return Trajectory(
        trajectory_id=d["trajectory_id"],
        scenario_id=d["scenario_id"],
        participant_id=pid,
        turns=tuple(turns),
        terminal=d["terminal"],
        final_score=d["final_score"],
        policy_version=d["policy_version"],
    )


def write_trajectories(path: str | os.PathLike, trajectories: Iterable[Trajectory], append: bool = False) -> int:
    """Write one JSON object per trajectory; returns the number written."""
    written = 0
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as f:
            for traj in trajectories:
                f.write(json.dumps(trajectory_to_dict(traj), ensure_ascii=False) + "\n")
                written += 1
    except OSError as exc:
        raise TrajectoryWriteError(path, written, exc) from exc
    return written


def read_trajectories(
    path: str | os.PathLike, score_range: tuple[float, float] | None = None
) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrajectoryFileError(path, lineno, f"malformed JSON ({exc.msg})") from None
            try:
                traj = trajectory_from_dict(data)
                if score_range is not None:
                    traj.check_score_range(*score_range)
            except ValidationError as exc:
                raise TrajectoryFileError(path, lineno, str(exc), exc.field) from None
            except (TypeError, ValueError) as exc:
                raise TrajectoryFileError(path, lineno, f"invalid value: {exc}") from None
            out.append(traj)
    return out


def ensure_dir(path: str | os.PathLike) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
