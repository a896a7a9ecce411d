"""Strategist, actor and PRM implementations."""

from __future__ import annotations

from epo.backends.actors import ScriptedActor, scripted_actor, strategy_token
from epo.backends.base import Actor, ActorContext, PolicyBackend, StrategistContext
from epo.backends.chat import (
    ChatActor,
    ChatError,
    ChatServiceClient,
    ChatServiceError,
    ChatStrategist,
    ChatTransportError,
    chat_complete,
)
from epo.backends.prm import ChatPRM, LabelFailure, OraclePRM, PRMParseError, parse_prm_response, render_prm_label
from epo.backends.softmax import ContextSoftmaxPolicy, GreedyModeError
from epo.envs.base import ProcessRewardLabel


def softmax_logprob(policy: ContextSoftmaxPolicy, context_key: str, token_id: str | int) -> float:
    return policy.softmax_logprob(context_key, token_id)


def softmax_grad(policy: ContextSoftmaxPolicy, context_key: str, token_id: str | int):
    return policy.softmax_grad(context_key, token_id)


__all__ = [
    "Actor",
    "ActorContext",
    "ChatActor",
    "ChatError",
    "ChatPRM",
    "ChatServiceClient",
    "ChatServiceError",
    "ChatStrategist",
    "ChatTransportError",
    "ContextSoftmaxPolicy",
    "GreedyModeError",
    "LabelFailure",
    "OraclePRM",
    "PRMParseError",
    "PolicyBackend",
    "ProcessRewardLabel",
    "ScriptedActor",
    "StrategistContext",
    "chat_complete",
    "parse_prm_response",
    "render_prm_label",
    "scripted_actor",
    "softmax_grad",
    "softmax_logprob",
    "strategy_token",
]
