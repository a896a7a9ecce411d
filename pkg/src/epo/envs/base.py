from __future__ import annotations

import copy
import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Mapping

from epo.core import Observation, Scenario, Source, Trajectory


class EnvError(RuntimeError):
    pass


class UnknownEnvError(EnvError, KeyError):
    def __str__(self) -> str:  # KeyError would quote the message
        return str(self.args[0])


NOTHING_HAPPENS = "Nothing happens."


@dataclass(frozen=True)
class StrategyVocabulary:
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("vocabulary must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate strategy names in {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class EnvState:
    env_id: str
    scenario_id: str
    max_turns: int
    data: Mapping[str, Any]
    turn: int = 0
    done: bool = False
    seed: int = 0


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    observations: dict[str, Observation]
    scores: dict[str, float] | None = None
    valid: bool = True


@dataclass(frozen=True)
class ProcessRewardLabel:
    """Critical-strategy indexes (1-based over strategist turns) plus the judge's reasoning."""

    indexes: tuple[int, ...]
    reasoning: str = ""

    def __post_init__(self) -> None:
        idx = tuple(self.indexes)
        object.__setattr__(self, "indexes", idx)
        for i in idx:
            if isinstance(i, bool) or not isinstance(i, int):
                raise ValueError(f"index must be an integer, got {i!r}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"indexes must be strictly increasing: {list(idx)}")
        if idx and idx[0] < 1:
            raise ValueError(f"indexes are 1-based, got {idx[0]}")

    def check_bounds(self, T: int) -> None:
        bad = [i for i in self.indexes if not 1 <= i <= T]
        if bad:
            raise ValueError(f"indexes {bad} outside [1, {T}]")

    def to_json(self) -> str:
        return json.dumps({"indexes": list(self.indexes), "reasoning": self.reasoning}, ensure_ascii=False)


def load_asset(name: str) -> dict[str, Any]:
    text = (resources.files("epo.envs") / "data" / name).read_text(encoding="utf-8")
    return json.loads(text)


def stable_seed(*parts: object) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


class Environment(ABC):
    """Deterministic text environment with a programmatic scorer.

    Subclasses implement ``_initial``, ``_apply`` and ``_score``; the base
    class owns turn counting, the cap, and the done flag.
    """

    env_id: str
    score_range: tuple[float, float]
    default_max_turns: int
    vocabulary: StrategyVocabulary
    two_party: bool = False

    # --- scenarios -------------------------------------------------------

    @abstractmethod
    def make_scenario(self, split: str, seed: int, index: int) -> Scenario: ...

    def scenarios(self, n: int, *, split: str = "train", seed: int = 0) -> list[Scenario]:
        return [self.make_scenario(split, seed, i) for i in range(n)]

    def scenario_by_id(self, scenario_id: str) -> Scenario:
        """Regenerate a scenario from its id (``<env>-<split>-<seed>-<index>``)."""
        try:
            env_id, split, seed, index = scenario_id.rsplit("-", 3)
        except ValueError:
            raise EnvError(f"cannot parse scenario id {scenario_id!r}") from None
        if env_id != self.env_id:
            raise EnvError(f"scenario {scenario_id!r} does not belong to env {self.env_id!r}")
        return self.make_scenario(split, int(seed), int(index))

    def _scenario_id(self, split: str, seed: int, index: int) -> str:
        return f"{self.env_id}-{split}-{seed}-{index}"

    # --- dynamics --------------------------------------------------------

    def participants(self, scenario: Scenario) -> list[str]:
        """Participants in turn order."""
        return scenario.participant_ids

    def reset(self, scenario: Scenario, seed: int = 0) -> tuple[EnvState, dict[str, Observation]]:
        if scenario.env_id != self.env_id:
            raise EnvError(f"scenario env_id {scenario.env_id!r} does not match env {self.env_id!r}")
        data, first = self._initial(scenario)
        state = EnvState(self.env_id, scenario.scenario_id, scenario.max_turns, data, 0, False, seed)
        obs = {pid: Observation(1, Source.ENVIRONMENT, text) for pid, text in first.items()}
        return state, obs

    def step(self, state: EnvState, participant_id: str, behavior: str) -> StepResult:
        if state.done:
            raise EnvError(f"{self.env_id}: step after episode end (turn {state.turn})")
        data = copy.deepcopy(dict(state.data))
        texts, done, valid = self._apply(data, participant_id, behavior)
        turn = state.turn + 1
        done = done or turn >= state.max_turns
        new = replace(state, data=data, turn=turn, done=done)
        obs = {}
        if not done:
            obs = {
                pid: Observation(turn + 1, self._source(pid, participant_id), text)
                for pid, text in texts.items()
            }
        scores = {pid: self._score(data, pid) for pid in self._participants_of(data)} if done else None
        return StepResult(new, obs, scores, valid)

    def score(self, state: EnvState, participant_id: str) -> float:
        if not state.done:
            raise EnvError(f"{self.env_id}: score requested before the episode ended")
        return self._score(state.data, participant_id)

    def _source(self, receiver: str, mover: str) -> Source:
        return Source.ENVIRONMENT

    @abstractmethod
    def _participants_of(self, data: Mapping[str, Any]) -> list[str]: ...

    @abstractmethod
    def _initial(self, scenario: Scenario) -> tuple[dict[str, Any], dict[str, str]]: ...

    @abstractmethod
    def _apply(self, data: dict[str, Any], participant_id: str, behavior: str) -> tuple[dict[str, str], bool, bool]:
        """Mutate ``data``; return (observation text per receiver, env-done, behavior-valid)."""

    @abstractmethod
    def _score(self, data: Mapping[str, Any], participant_id: str) -> float: ...

    # --- hooks used by backends / reward ---------------------------------

    @abstractmethod
    def observation_key(self, content: str) -> str:
        """Coarse, deterministic reduction of an observation for tabular policies."""

    @abstractmethod
    def scripted_behavior(self, token: str | None, state: EnvState, participant_id: str, goal_params: Mapping[str, Any]) -> str:
        """Deterministic behavior for a strategy token (None: no strategist)."""

    @abstractmethod
    def oracle_label(self, trajectory: Trajectory, scenario: Scenario) -> ProcessRewardLabel: ...

    def replay(self, scenario: Scenario, moves: list[tuple[str, str]]) -> list[EnvState]:
        """States after each (participant, behavior) move, starting with the reset state."""
        state, _ = self.reset(scenario)
        states = [state]
        for pid, text in moves:
            state = self.step(state, pid, text).state
            states.append(state)
        return states

    def _check_terminal(self, trajectory: Trajectory) -> None:
        if not trajectory.terminal:
            raise EnvError(f"trajectory {trajectory.trajectory_id!r} is not terminal")
