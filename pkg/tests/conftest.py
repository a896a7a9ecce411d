from __future__ import annotations

from typing import Sequence

import numpy as np
import pytest

from epo.backends.base import StrategistContext
from epo.core import Behavior, Observation, Source, Strategy, Trajectory, Turn


class ScriptedStrategist:
    """Plays a fixed token sequence, then repeats the last token."""

    def __init__(self, tokens: Sequence[str], tag: str = "scripted"):
        self.tokens = list(tokens)
        self.tag = tag

    def _pick(self, context: StrategistContext) -> Strategy:
        i = min(len(context.strategies), len(self.tokens) - 1)
        return Strategy((self.tokens[i],), (0.0,))

    def sample(self, context, rng):
        return self._pick(context)

    def greedy_decode(self, context):
        return self._pick(context)

    def logprobs(self, context, tokens):
        return [0.0] * len(tokens)

    def update(self, batch, step_size):
        raise NotImplementedError

    def version(self) -> str:
        return self.tag

    def param_digest(self) -> str:
        return self.tag


class FailingStrategist(ScriptedStrategist):
    def _pick(self, context):
        raise RuntimeError("backend unavailable")


def make_trajectory(
    n_turns: int = 3,
    rewards: Sequence[float | None] | None = None,
    text: str = "offer 100",
    tid: str = "negotiation-train-0-0/buyer/0",
) -> Trajectory:
    turns = []
    for i in range(n_turns):
        r = rewards[i] if rewards is not None else None
        turns.append(
            Turn(
                Observation(i + 1, Source.ENVIRONMENT if i == 0 else Source.PARTNER, f"obs {i}"),
                Behavior(f"{text} #{i}", "buyer"),
                Strategy(("hold_firm",), (-0.5,)),
                r,
            )
        )
    return Trajectory(tid, "negotiation-train-0-0", "buyer", tuple(turns), True, 5.0, "toy-v0")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
