"""Episode engine: strategist proposes, frozen actor acts, environment answers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from epo.backends.base import Actor, ActorContext, PolicyBackend, StrategistContext
from epo.core import Behavior, Observation, PromptTemplate, Scenario, Strategy, TemplateRole, Trajectory, Turn
from epo.envs.base import EnvState, Environment

log = logging.getLogger(__name__)

NO_STRATEGIST_VERSION = "no-strategist"


class Decoding(str, Enum):
    SAMPLE = "sample"
    GREEDY = "greedy"


@dataclass(frozen=True)
class RolloutConfig:
    seed: int = 0
    max_turns: int | None = None
    strategist_enabled: bool = True
    decoding: Decoding = Decoding.SAMPLE
    temperature: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "decoding", Decoding(self.decoding))
        if self.decoding is Decoding.SAMPLE and not self.temperature > 0:
            raise ValueError("temperature must be > 0 when sampling")
        if self.max_turns is not None and self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")


@dataclass
class EpoInstance:
    """One agent: a (swappable) strategist paired with a frozen actor."""

    strategist: PolicyBackend | None
    actor: Actor
    prompt_templates: Mapping[TemplateRole, PromptTemplate] = field(default_factory=dict)
    participant_id: str | None = None


class EpisodeError(RuntimeError):
    """A backend failed mid-episode; the partial trajectory is attached for diagnostics."""

    def __init__(self, message: str, partial: Sequence[Trajectory], cause: BaseException | None = None):
        super().__init__(message)
        self.partial = list(partial)
        self.cause = cause


@dataclass(frozen=True)
class BatchError:
    index: int
    scenario_id: str
    message: str
    partial: tuple[Trajectory, ...] = ()


@dataclass
class BatchResult:
    trajectories: list[Trajectory]
    errors: list[BatchError]


class _Side:
    """Running record for one participant."""

    def __init__(self, scenario: Scenario, instance: EpoInstance, pid: str, env: Environment, config: RolloutConfig):
        self.pid = pid
        self.instance = instance
        self.goal = scenario.goal_for(pid)
        self.context = scenario.context
        self.env = env
        self.config = config
        # a side without a strategist plays the bare actor
        self.enabled = config.strategist_enabled and instance.strategist is not None
        self.version = instance.strategist.version() if self.enabled else NO_STRATEGIST_VERSION
        self.turns: list[Turn] = []
        self.history: list[tuple[Observation, Behavior]] = []
        self.strategies: list[Strategy | None] = []

    def act(self, obs: Observation, state: EnvState, rng: np.random.Generator) -> Behavior:
        strategy = None
        if self.enabled:
            ctx = StrategistContext(
                self.goal,
                tuple(self.history),
                tuple(self.strategies),
                obs,
                self.env.observation_key(obs.content),
                self.context,
                self.env.env_id,
            )
            if self.config.decoding is Decoding.GREEDY:
                strategy = self.instance.strategist.greedy_decode(ctx)
            else:
                strategy = self.instance.strategist.sample(ctx, rng)
        self.strategies.append(strategy)
        actx = ActorContext(self.goal, tuple(self.history), tuple(self.strategies), obs, self.context, self.env.env_id)
        behavior = self.instance.actor.act(actx, state, self.pid)
        self.turns.append(Turn(obs, behavior, strategy))
        self.history.append((obs, behavior))
        return behavior

    def trajectory(self, scenario: Scenario, seed: int, state: EnvState) -> Trajectory:
        score = self.env.score(state, self.pid) if state.done else 0.0
        return Trajectory(
            f"{scenario.scenario_id}/{self.pid}/{seed}",
            scenario.scenario_id,
            self.pid,
            tuple(self.turns),
            state.done,
            score,
            self.version,
        )


def _start(scenario: Scenario, env: Environment, config: RolloutConfig, seed: int):
    state, first = env.reset(scenario, seed)
    cap = min(config.max_turns or scenario.max_turns, scenario.max_turns)
    # the env forces done at its cap, so a shorter rollout cap still ends with scores
    return replace(state, max_turns=cap), first


def run_episode(
    scenario: Scenario, instance: EpoInstance, env: Environment, config: RolloutConfig, seed: int | None = None
) -> Trajectory:
    """Single-participant loop. ``seed`` defaults to ``config.seed``."""
    seed = config.seed if seed is None else seed
    pids = env.participants(scenario)
    if len(pids) != 1:
        raise ValueError(f"run_episode needs a single-participant env, {env.env_id!r} has {len(pids)}")
    pid = pids[0]
    rng = np.random.default_rng(seed)
    state, first = _start(scenario, env, config, seed)
    side = _Side(scenario, instance, pid, env, config)
    obs = first[pid]
    try:
        while not state.done:
            behavior = side.act(obs, state, rng)
            result = env.step(state, pid, behavior.content)
            state = result.state
            if not state.done:
                obs = result.observations[pid]
    except Exception as exc:
        raise EpisodeError(f"{scenario.scenario_id}: {exc}", [side.trajectory(scenario, seed, state)], exc) from exc
    return side.trajectory(scenario, seed, state)


def self_play_episode(
    scenario: Scenario,
    instance_a: EpoInstance,
    instance_b: EpoInstance,
    env: Environment,
    config: RolloutConfig,
    seed: int | None = None,
) -> tuple[Trajectory, Trajectory]:
    """Two instances alternate turns; the first participant in env order moves first.

    Each participant sees the other's utterances as partner observations and
    keeps its own goal and strategies private.
    """
    seed = config.seed if seed is None else seed
    pids = env.participants(scenario)
    if len(pids) != 2:
        raise ValueError(f"self_play_episode needs a two-participant env, {env.env_id!r} has {len(pids)}")
    by_pid = {}
    for inst, default in ((instance_a, pids[0]), (instance_b, pids[1])):
        pid = inst.participant_id or default
        if pid in by_pid or pid not in pids:
            raise ValueError(f"instances must cover participants {pids}, got {pid!r} twice or unknown")
        by_pid[pid] = inst
    rng = np.random.default_rng(seed)
    state, first = _start(scenario, env, config, seed)
    sides = {pid: _Side(scenario, by_pid[pid], pid, env, config) for pid in pids}
    pending: dict[str, Observation] = {pids[0]: first[pids[0]]}
    mover = 0
    try:
        while not state.done:
            pid = pids[mover]
            behavior = sides[pid].act(pending.pop(pid), state, rng)
            result = env.step(state, pid, behavior.content)
            state = result.state
            pending.update(result.observations)
            mover = 1 - mover
    except Exception as exc:
        partial = [sides[p].trajectory(scenario, seed, state) for p in pids]
        raise EpisodeError(f"{scenario.scenario_id}: {exc}", partial, exc) from exc
    a, b = (sides[p].trajectory(scenario, seed, state) for p in pids)
    return a, b


def episode_seed(seed: int, index: int) -> int:
    return seed ^ index


def run_batch(
    scenarios: Sequence[Scenario],
    instances: EpoInstance | Sequence[EpoInstance],
    env: Environment,
    config: RolloutConfig,
    parallelism: int = 1,
) -> BatchResult:
    """Run every scenario; output follows scenario order whatever the completion order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    pair = list(instances) if isinstance(instances, (list, tuple)) else [instances]

    def one(index: int) -> list[Trajectory]:
        scenario, seed = scenarios[index], episode_seed(config.seed, index)
        if env.two_party:
            a, b = pair if len(pair) == 2 else (pair[0], pair[0])
            return list(self_play_episode(scenario, a, b, env, config, seed))
        return [run_episode(scenario, pair[0], env, config, seed)]

    def guarded(index: int) -> list[Trajectory] | BatchError:
        try:
            return one(index)
        except EpisodeError as exc:
            log.warning("episode %d failed: %s", index, exc)
            return BatchError(index, scenarios[index].scenario_id, str(exc), tuple(exc.partial))
        except Exception as exc:
            log.warning("episode %d failed: %s", index, exc)
            return BatchError(index, scenarios[index].scenario_id, f"{type(exc).__name__}: {exc}")

    if parallelism == 1:
        results = [guarded(i) for i in range(len(scenarios))]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(guarded, range(len(scenarios))))
    trajectories, errors = [], []
    for r in results:
        if isinstance(r, BatchError):
            errors.append(r)
        else:
            trajectories.extend(r)
    return BatchResult(trajectories, errors)
