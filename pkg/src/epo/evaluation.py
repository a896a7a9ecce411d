"""Seeded evaluation runs and strategist pairing matrices."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from epo.backends.actors import ScriptedActor
from epo.backends.base import Actor, PolicyBackend
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.core import Scenario, Trajectory
from epo.envs.base import Environment
from epo.rollout import BatchError, Decoding, EpoInstance, RolloutConfig, run_batch

GREEDY_ENVS = frozenset({"shop", "household"})
DIALOGUE_TEMPERATURE = 0.7


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    decoding: Decoding | None = None  # None: greedy for shop/household, sampled otherwise
    temperature: float | None = None  # overrides a toy policy's temperature when sampling
    parallelism: int = 1

    def resolved_decoding(self, env_id: str) -> Decoding:
        if self.decoding is not None:
            return Decoding(self.decoding)
        return Decoding.GREEDY if env_id in GREEDY_ENVS else Decoding.SAMPLE


@dataclass(frozen=True)
class EvalReport:
    label: str
    env_id: str
    scenario_ids: tuple[str, ...]
    scores: tuple[float, ...]  # per scenario; two-party envs average both sides
    mean_score: float
    stderr: float
    mean_length: float
    side_means: Mapping[str, float] | None = None
    average_payoff: float | None = None
    errors: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["scenario_ids"] = list(self.scenario_ids)
        d["scores"] = list(self.scores)
        d["errors"] = list(self.errors)
        d["side_means"] = dict(self.side_means) if self.side_means is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _stderr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def _instance(policy: PolicyBackend | None, actor: Actor, temperature: float | None, pid: str | None) -> EpoInstance:
    if temperature is not None and isinstance(policy, ContextSoftmaxPolicy):
        policy = policy.copy()
        policy.temperature = float(temperature)
    return EpoInstance(policy, actor, participant_id=pid)


def _rollout_config(env: Environment, config: EvalConfig, enabled: bool) -> RolloutConfig:
    return RolloutConfig(seed=config.seed, strategist_enabled=enabled, decoding=config.resolved_decoding(env.env_id))


def _report(label: str, env: Environment, scenarios: Sequence[Scenario], trajectories: list[Trajectory], errors: list[BatchError]) -> EvalReport:
    by_scenario: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_scenario.setdefault(t.scenario_id, []).append(t)
    ids = [s.scenario_id for s in scenarios if s.scenario_id in by_scenario]
    if not ids:
        raise RuntimeError(f"evaluation {label!r}: every episode failed")
    scores = [float(np.mean([t.final_score for t in by_scenario[i]])) for i in ids]
    lengths = [max(t.turns[-1].observation.turn_index if t.turns else 0 for t in by_scenario[i]) for i in ids]
    side_means = None
    average = None
    if env.two_party:
        sides: dict[str, list[float]] = {}
        for t in trajectories:
            sides.setdefault(t.participant_id, []).append(t.final_score)
        side_means = {pid: float(np.mean(v)) for pid, v in sorted(sides.items())}
        average = float(np.mean(list(side_means.values())))
    return EvalReport(
        label=label,
        env_id=env.env_id,
        scenario_ids=tuple(ids),
        scores=tuple(scores),
        mean_score=float(np.mean(scores)),
        stderr=_stderr(scores),
        mean_length=float(np.mean(lengths)),
        side_means=side_means,
        average_payoff=average,
        errors=tuple(e.message for e in errors),
    )


def evaluate(
    policy: PolicyBackend | None,
    env: Environment,
    scenarios: Sequence[Scenario],
    config: EvalConfig = EvalConfig(),
    label: str = "policy",
    actor: Actor | None = None,
) -> EvalReport:
    """Score a strategist (or the bare actor when ``policy`` is None).

    Two-party environments are played in self-play with ``policy`` on both sides.
    The mean score is the Monte Carlo estimate of the expected undiscounted return.
    """
    if not scenarios:
        raise ValueError("scenarios must be non-empty")
    actor = actor or ScriptedActor(env.env_id)
    inst = _instance(policy, actor, config.temperature, None)
    result = run_batch(scenarios, [inst, inst], env, _rollout_config(env, config, policy is not None), config.parallelism)
    return _report(label, env, scenarios, result.trajectories, result.errors)


def evaluate_pair(
    policy_a: PolicyBackend | None,
    policy_b: PolicyBackend | None,
    env: Environment,
    scenarios: Sequence[Scenario],
    config: EvalConfig = EvalConfig(),
    label: str = "pair",
    actor: Actor | None = None,
) -> EvalReport:
    """Two-party evaluation with a different strategist on each side (None: bare actor)."""
    if not env.two_party:
        raise ValueError(f"{env.env_id!r} is not a two-party environment")
    if not scenarios:
        raise ValueError("scenarios must be non-empty")
    actor = actor or ScriptedActor(env.env_id)
    a_pid, b_pid = env.participants(scenarios[0])
    rollout = _rollout_config(env, config, True)
    a = _instance(policy_a, actor, config.temperature, a_pid)
    b = _instance(policy_b, actor, config.temperature, b_pid)
    result = run_batch(scenarios, [a, b], env, rollout, config.parallelism)
    return _report(label, env, scenarios, result.trajectories, result.errors)


def config_matrix(
    policies_by_side: Mapping[str, PolicyBackend | None],
    env: Environment,
    scenarios: Sequence[Scenario],
    config: EvalConfig = EvalConfig(),
) -> dict[tuple[str, str], EvalReport]:
    """Every (side A config, side B config) pairing, keyed by their labels."""
    out = {}
    for a_label, pa in policies_by_side.items():
        for b_label, pb in policies_by_side.items():
            out[(a_label, b_label)] = evaluate_pair(pa, pb, env, scenarios, config, f"{a_label} vs {b_label}")
    return out


def format_table(reports: Sequence[EvalReport]) -> str:
    sides = sorted({pid for r in reports if r.side_means for pid in r.side_means})
    head = ["config", "n", "mean", "stderr", "length"] + sides
    rows = [head]
    for r in reports:
        row = [r.label, str(len(r.scores)), f"{r.mean_score:.3f}", f"{r.stderr:.3f}", f"{r.mean_length:.1f}"]
        row += [f"{r.side_means[s]:.3f}" if r.side_means and s in r.side_means else "-" for s in sides]
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def matrix_csv(matrix: Mapping[tuple[str, str], EvalReport]) -> str:
    buf = io.StringIO()
    sides = sorted({pid for r in matrix.values() if r.side_means for pid in r.side_means})
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["side_a", "side_b", "mean", "average_payoff"] + [f"mean_{s}" for s in sides])
    for (a, b), r in matrix.items():
        writer.writerow(
            [a, b, f"{r.mean_score:.6f}", f"{(r.average_payoff or 0.0):.6f}"]
            + [f"{r.side_means.get(s, 0.0):.6f}" for s in sides]
        )
    return buf.getvalue()
