"""Environment registry keyed by string id."""

from __future__ import annotations

from epo.envs.base import (
    NOTHING_HAPPENS,
    EnvError,
    EnvState,
    Environment,
    ProcessRewardLabel,
    StepResult,
    StrategyVocabulary,
    UnknownEnvError,
)
from epo.envs.household import HouseholdEnv
from epo.envs.negotiation import NegotiationEnv
from epo.envs.shop import ShopEnv

_REGISTRY: dict[str, Environment] = {
    "negotiation": NegotiationEnv(),
    "shop": ShopEnv(),
    "household": HouseholdEnv(),
}


def registered_envs() -> list[str]:
    return sorted(_REGISTRY)


def get_env(env_id: str) -> Environment:
    try:
        return _REGISTRY[env_id]
    except KeyError:
        raise UnknownEnvError(f"unknown env_id {env_id!r}; registered: {', '.join(registered_envs())}") from None


def env_reset(env_id: str, scenario, seed: int = 0):
    return get_env(env_id).reset(scenario, seed)


def env_step(state: EnvState, participant_id: str, behavior: str) -> StepResult:
    return get_env(state.env_id).step(state, participant_id, behavior)


def env_score(state: EnvState, participant_id: str) -> float:
    return get_env(state.env_id).score(state, participant_id)


def oracle_prm_label(trajectory, scenario=None) -> ProcessRewardLabel:
    env_id = trajectory.scenario_id.rsplit("-", 3)[0]
    env = get_env(env_id)
    return env.oracle_label(trajectory, scenario or env.scenario_by_id(trajectory.scenario_id))


__all__ = [
    "NOTHING_HAPPENS",
    "EnvError",
    "EnvState",
    "Environment",
    "HouseholdEnv",
    "NegotiationEnv",
    "ProcessRewardLabel",
    "ShopEnv",
    "StepResult",
    "StrategyVocabulary",
    "UnknownEnvError",
    "env_reset",
    "env_score",
    "env_step",
    "get_env",
    "oracle_prm_label",
    "registered_envs",
]
