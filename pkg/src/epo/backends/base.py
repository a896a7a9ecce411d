from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol, Sequence, runtime_checkable

import numpy as np

from epo.core import Behavior, Goal, Observation, Strategy

if TYPE_CHECKING:
    from epo.envs.base import EnvState
    from epo.train import UpdateBatch


@dataclass(frozen=True)
class StrategistContext:
    """Inputs to the strategist at turn t: goal, h_{1:t-1}, a_{1:t-1}, x_t."""

    goal: Goal
    history: tuple[tuple[Observation, Behavior], ...]
    strategies: tuple[Strategy | None, ...]
    observation: Observation
    observation_key: str
    scenario_context: str = ""
    env_id: str = ""


@dataclass(frozen=True)
class ActorContext:
    """Inputs to the actor at turn t: goal, h_{1:t-1}, a_{1:t}, x_t."""

    goal: Goal
    history: tuple[tuple[Observation, Behavior], ...]
    strategies: tuple[Strategy | None, ...]
    observation: Observation
    scenario_context: str = ""
    env_id: str = ""

    @property
    def strategy(self) -> Strategy | None:
        return self.strategies[-1] if self.strategies else None


@runtime_checkable
class PolicyBackend(Protocol):
    """The trainable strategist."""

    def sample(self, context: StrategistContext, rng: np.random.Generator) -> Strategy: ...

    def greedy_decode(self, context: StrategistContext) -> Strategy: ...

    def logprobs(self, context: StrategistContext, tokens: Sequence[str | int]) -> list[float]: ...

    def update(self, batch: UpdateBatch, step_size: float) -> str: ...

    def version(self) -> str: ...

    def param_digest(self) -> str: ...


@runtime_checkable
class Actor(Protocol):
    """The frozen agent turning a strategy into behavior. Carries no training hooks."""

    def act(self, context: ActorContext, state: EnvState, participant_id: str) -> Behavior: ...

    def digest(self) -> str: ...
