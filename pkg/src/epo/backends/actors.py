from __future__ import annotations

import hashlib
from typing import Any, Mapping

from epo.backends.base import ActorContext
from epo.core import Behavior, Strategy
from epo.envs.base import EnvState


def strategy_token(strategy: Strategy | None, vocabulary) -> str | None:
    """The token the actor acts on: first in-vocabulary token, else the raw first token."""
    if strategy is None:
        return None
    for tok in strategy.tokens:
        if tok in vocabulary:
            return str(tok)
    return str(strategy.tokens[0])


def scripted_actor(
    strategy: Strategy | None,
    env_state: EnvState,
    participant_id: str,
    goal_params: Mapping[str, Any] | None = None,
) -> Behavior:
    """Deterministic behavior for (strategy token, state); unknown tokens fall back to a hold pattern."""
    from epo.envs import get_env

    env = get_env(env_state.env_id)
    token = strategy_token(strategy, env.vocabulary)
    text = env.scripted_behavior(token, env_state, participant_id, goal_params or {})
    return Behavior(text, participant_id)


class ScriptedActor:
    """Frozen rule-based actor. Has no parameters, so its digest is a constant of the rules."""

    def __init__(self, env_id: str):
        self.env_id = env_id

    def act(self, context: ActorContext, state: EnvState, participant_id: str) -> Behavior:
        return scripted_actor(context.strategy, state, participant_id, context.goal.params)

    def digest(self) -> str:
        from epo.envs import get_env

        env = get_env(self.env_id)
        tag = f"scripted:{self.env_id}:{getattr(env, 'asset_version', '')}:{env.vocabulary.names}"
        return hashlib.sha256(tag.encode()).hexdigest()
