"""REINFORCE objective, per-iteration update and the self-play training driver."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from epo.backends.actors import ScriptedActor
from epo.backends.prm import LabelFailure, OraclePRM
from epo.backends.softmax import ContextSoftmaxPolicy, trajectory_context_keys
from epo.core import Trajectory, write_trajectories
from epo.envs import get_env
from epo.envs.base import Environment, stable_seed
from epo.reward import DEFAULT_GAMMA, AdvantageTable, RewardMode, assign_process_rewards, label_trajectory, trajectory_rewards
from epo.rollout import EpoInstance, RolloutConfig, run_batch

log = logging.getLogger(__name__)

CHAT_LEARNING_RATE = 1e-6
TOY_LEARNING_RATE = 50.0
DROP_ALERT_FRACTION = 0.2


class NoTrainableDataError(RuntimeError):
    def __init__(self, message: str = "no trainable data"):
        super().__init__(message)


class LossError(ValueError):
    """A log-probability was NaN or infinite."""


# ---------------------------------------------------------------------------
# update batches


@dataclass(frozen=True)
class StrategyItem:
    """One strategy a_t: a context key per token, the tokens, and A_t."""

    context_keys: tuple[str, ...]
    tokens: tuple[str | int, ...]
    advantage: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "context_keys", tuple(self.context_keys))
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("a strategy needs at least one token")
        if len(self.context_keys) != len(self.tokens):
            raise ValueError("context keys must align one-to-one with tokens")
        if not math.isfinite(self.advantage):
            raise ValueError("advantage must be finite")

    @property
    def k(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TrajectoryItem:
    strategies: tuple[StrategyItem, ...]
    item_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if not self.strategies:
            raise ValueError(f"trajectory item {self.item_id!r} has no strategies")

    @property
    def T(self) -> int:
        return len(self.strategies)


@dataclass(frozen=True)
class UpdateBatch:
    items: tuple[TrajectoryItem, ...]
    batch_size: int = 32

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def scaled(self, factor: float) -> UpdateBatch:
        """Same batch with every advantage multiplied by ``factor``."""
        items = tuple(
            TrajectoryItem(tuple(dataclasses.replace(s, advantage=s.advantage * factor) for s in it.strategies), it.item_id)
            for it in self.items
        )
        return UpdateBatch(items, self.batch_size)


def build_items(
    trajectories: Iterable[Trajectory],
    mode: RewardMode | str,
    gamma: float,
    env: Environment,
) -> tuple[list[TrajectoryItem], list[Trajectory], list[Trajectory]]:
    """Turn rewarded trajectories into update items.

    Returns (items, kept, dropped); trajectories without usable rewards are dropped.
    Kept trajectories with no strategist turn contribute no item.
    """
    items, kept, dropped = [], [], []
    for traj in trajectories:
        rewards = trajectory_rewards(traj, mode, env.score_range) if traj.terminal else None
        if rewards is None:
            dropped.append(traj)
            continue
        kept.append(traj)
        if traj.T == 0:
            continue
        table = AdvantageTable.from_rewards(rewards, gamma)
        keys = trajectory_context_keys(traj, env.observation_key)
        strategies = tuple(
            StrategyItem(tuple(k), turn.strategy.tokens, a)
            for k, turn, a in zip(keys, traj.strategist_turns, table.advantages)
        )
        items.append(TrajectoryItem(strategies, traj.trajectory_id))
    return items, kept, dropped


# ---------------------------------------------------------------------------
# loss and gradient


def reinforce_objective(
    advantages: Sequence[Sequence[float]], logprobs: Sequence[Sequence[Sequence[float]]]
) -> float:
    """-mean_traj (1/T) sum_t A_t (1/k_t) sum_i log pi(a_t,i), from precomputed log-probs."""
    if not advantages:
        raise ValueError("batch must be non-empty")
    total = 0.0
    for n, (adv, lps) in enumerate(zip(advantages, logprobs, strict=True)):
        if len(adv) != len(lps) or not adv:
            raise ValueError(f"item {n}: need one advantage per strategy and T >= 1")
        acc = 0.0
        for t, (a, lp) in enumerate(zip(adv, lps)):
            arr = np.asarray(lp, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise LossError(f"item {n}, strategy {t + 1}: non-finite log-probability {arr.tolist()}")
            acc += a * float(arr.mean())
        total += acc / len(adv)
    return -total / len(advantages)


def reinforce_loss(batch: UpdateBatch, policy: ContextSoftmaxPolicy) -> float:
    if not batch.items:
        raise ValueError("batch must be non-empty")
    advs, lps = [], []
    for n, item in enumerate(batch.items):
        advs.append([s.advantage for s in item.strategies])
        rows = []
        for t, s in enumerate(item.strategies):
            row = [policy.softmax_logprob(k, tok) for k, tok in zip(s.context_keys, s.tokens)]
            if not all(math.isfinite(x) for x in row):
                raise LossError(f"item {n} ({item.item_id}), strategy {t + 1}: non-finite log-probability")
            rows.append(row)
        lps.append(rows)
    return reinforce_objective(advs, lps)


def loss_gradient(batch: UpdateBatch, policy: ContextSoftmaxPolicy) -> dict[str, np.ndarray]:
    """Sparse gradient of ``reinforce_loss`` with respect to each touched logits row."""
    if not batch.items:
        raise ValueError("batch must be non-empty")
    grad: dict[str, np.ndarray] = {}
    scale = -1.0 / len(batch.items)
    for n, item in enumerate(batch.items):
        for t, s in enumerate(item.strategies):
            if s.advantage == 0.0:
                continue
            w = scale * s.advantage / (item.T * s.k)
            for key, tok in zip(s.context_keys, s.tokens):
                g = policy.softmax_grad(key, tok)
                if not np.all(np.isfinite(g)):
                    raise LossError(f"item {n} ({item.item_id}), strategy {t + 1}: non-finite gradient")
                if key in grad:
                    grad[key] += w * g
                else:
                    grad[key] = w * g
    return grad


# ---------------------------------------------------------------------------
# configuration and schedule


class Schedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = DEFAULT_GAMMA
    learning_rate: float = TOY_LEARNING_RATE
    warmup_fraction: float = 0.03
    schedule: Schedule = Schedule.COSINE
    epochs: int = 3
    batch_size: int = 32
    reward_mode: RewardMode = RewardMode.PRM
    iterations: int = 8
    scenarios_per_iteration: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        object.__setattr__(self, "reward_mode", RewardMode.parse(self.reward_mode))
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        for name in ("epochs", "batch_size", "scenarios_per_iteration"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["schedule"] = self.schedule.value
        d["reward_mode"] = self.reward_mode.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> TrainConfig:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def warmup_steps(config: TrainConfig, total_steps: int) -> int:
    return math.ceil(config.warmup_fraction * total_steps)


def lr_at_step(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup to the peak rate, then cosine (or constant) to the end."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    lr = config.learning_rate
    w = warmup_steps(config, total_steps)
    if step < w:
        return lr * step / w
    if config.schedule is Schedule.CONSTANT:
        return lr
    p = (step - w) / (total_steps - w)
    return lr * (1.0 + math.cos(math.pi * p)) / 2.0


# ---------------------------------------------------------------------------
# one iteration


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    mean_score: float
    mean_loss: float
    version_before: str
    version_after: str
    kept: int
    dropped: int
    steps: int = 0

    @property
    def collected(self) -> int:
        return self.kept + self.dropped

    def metrics(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "mean_score": self.mean_score,
            "mean_loss": self.mean_loss,
            "kept": self.kept,
            "dropped": self.dropped,
            "policy_version": self.version_before,
        }


def train_iteration(
    policy: ContextSoftmaxPolicy,
    trajectories: Sequence[Trajectory],
    config: TrainConfig,
    env: Environment | str,
    iteration: int = 0,
    extra_dropped: int = 0,
    scores: Sequence[float] | None = None,
) -> tuple[ContextSoftmaxPolicy, IterationReport]:
    """Run ``config.epochs`` passes of mini-batch REINFORCE over the kept trajectories.

    The policy is updated in place and returned. ``extra_dropped`` counts
    trajectories already removed upstream (failed labels); ``scores`` is the
    collected data's final scores when it differs from ``trajectories``.
    """
    env = get_env(env) if isinstance(env, str) else env
    version_before = policy.version()
    items, kept, dropped = build_items(trajectories, config.reward_mode, config.gamma, env)
    if not kept:
        raise NoTrainableDataError()
    n_drop = len(dropped) + extra_dropped
    collected = len(kept) + n_drop
    if n_drop / collected > DROP_ALERT_FRACTION:
        log.warning("iteration %d dropped %d of %d trajectories", iteration, n_drop, collected)
    chunks = [items[i : i + config.batch_size] for i in range(0, len(items), config.batch_size)]
    total = config.epochs * len(chunks)
    losses, step = [], 0
    for _ in range(config.epochs):
        for chunk in chunks:
            batch = UpdateBatch(tuple(chunk), config.batch_size)
            losses.append(reinforce_loss(batch, policy))
            policy.update(batch, lr_at_step(config, step, total))
            step += 1
    all_scores = [t.final_score for t in trajectories] if scores is None else list(scores)
    report = IterationReport(
        iteration=iteration,
        mean_score=float(np.mean(all_scores)) if all_scores else 0.0,
        mean_loss=float(np.mean(losses)) if losses else 0.0,
        version_before=version_before,
        version_after=policy.version(),
        kept=len(kept),
        dropped=n_drop,
        steps=step,
    )
    return policy, report


# ---------------------------------------------------------------------------
# self-play driver


@dataclass(frozen=True)
class RunConfig:
    env_id: str = "negotiation"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    policy_temperature: float = 1.0
    strategy_length: int = 1
    parallelism: int = 1
    split: str = "train"
    scenario_pool: int | None = None

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        d = dict(d)
        train = {k: d.pop(k) for k in list(d) if k in {f.name for f in dataclasses.fields(TrainConfig)}}
        train.update(d.pop("train", {}))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return cls(train=TrainConfig.from_dict(train), **d)


def iteration_scenarios(env: Environment, config: RunConfig, iteration: int):
    """Scenario subset for an iteration.

    Without a pool every iteration gets fresh scenarios. With ``scenario_pool``
    the subset is drawn without replacement from a fixed pool of that size.
    """
    n = config.train.scenarios_per_iteration
    if config.scenario_pool is None:
        return [env.make_scenario(config.split, config.seed, iteration * n + i) for i in range(n)]
    if config.scenario_pool < n:
        raise ValueError("scenario_pool must be >= scenarios_per_iteration")
    rng = np.random.default_rng(stable_seed("pool", config.seed, iteration))
    picks = sorted(rng.choice(config.scenario_pool, size=n, replace=False).tolist())
    return [env.make_scenario(config.split, config.seed, i) for i in picks]


def iteration_seed(seed: int, iteration: int) -> int:
    return stable_seed("rollout", seed, iteration) >> 1


def self_play_rl(
    config: RunConfig,
    policy: ContextSoftmaxPolicy | None = None,
    actor=None,
    prm=None,
    out_dir: str | os.PathLike | None = None,
    on_iteration: Callable[[IterationReport, list[Trajectory]], None] | None = None,
) -> list[IterationReport]:
    """Collect on-policy data with the current strategist, label, train; repeat.

    ``policy`` is trained in place. Earlier iterations' data is never reused.
    When ``out_dir`` is given, labeled trajectories, labels and metrics are appended there.
    """
    env = get_env(config.env_id)
    if policy is None:
        policy = ContextSoftmaxPolicy(env.vocabulary.names, config.policy_temperature, config.strategy_length)
    actor = actor or ScriptedActor(env.env_id)
    prm = prm or OraclePRM()
    from epo.core import load_templates

    templates = load_templates(env.env_id)
    instance = EpoInstance(policy, actor, templates)
    paths = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.jsonl" for name in ("trajectories", "labels", "metrics")}
        for p in paths.values():
            p.write_text("", encoding="utf-8")
    reports = []
    for it in range(1, config.train.iterations + 1):
        scenarios = iteration_scenarios(env, config, it - 1)
        by_id = {s.scenario_id: s for s in scenarios}
        rollout = RolloutConfig(seed=iteration_seed(config.seed, it), temperature=config.policy_temperature)
        batch = run_batch(scenarios, [instance, instance], env, rollout, config.parallelism)
        for err in batch.errors:
            log.warning("iteration %d: %s", it, err.message)
        version = policy.version()
        stale = [t.trajectory_id for t in batch.trajectories if t.policy_version != version]
        if stale:
            raise RuntimeError(f"off-policy trajectories in iteration {it}: {stale[:3]}")
        labeled, label_rows, failures = [], [], 0
        for traj in batch.trajectories:
            if config.train.reward_mode is RewardMode.TERMINAL_ONLY:
                labeled.append(traj)
                continue
            result = label_trajectory(prm, traj, templates, by_id[traj.scenario_id])
            if isinstance(result, LabelFailure):
                failures += 1
                label_rows.append({"iteration": it, "trajectory_id": traj.trajectory_id, "failure": result.reason})
                continue
            labeled.append(assign_process_rewards(traj, result))
            label_rows.append(
                {"iteration": it, "trajectory_id": traj.trajectory_id, "indexes": list(result.indexes), "reasoning": result.reasoning}
            )
        scores = [t.final_score for t in batch.trajectories]
        _, report = train_iteration(
            policy, labeled, config.train, env, iteration=it,
            extra_dropped=failures + len(batch.errors), scores=scores,
        )
        reports.append(report)
        if paths is not None:
            write_trajectories(paths["trajectories"], labeled, append=True)
            with open(paths["labels"], "a", encoding="utf-8") as f:
                for row in label_rows:
                    f.write(json.dumps(row, ensure_ascii=False) + "\n")
            with open(paths["metrics"], "a", encoding="utf-8") as f:
                f.write(json.dumps(report.metrics()) + "\n")
        if on_iteration is not None:
            on_iteration(report, batch.trajectories)
    return reports
