"""Process rewards, discounted returns and max-abs-normalized advantages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from epo.backends.prm import LabelFailure
from epo.core import PromptTemplate, Scenario, TemplateRole, Trajectory
from epo.envs.base import EnvError, ProcessRewardLabel

DEFAULT_GAMMA = 0.99


class RewardMode(str, Enum):
    PRM = "prm"
    TERMINAL_ONLY = "terminal_only"

    @classmethod
    def parse(cls, value: str | RewardMode) -> RewardMode:
        if value == "terminal":
            return cls.TERMINAL_ONLY
        return cls(value)


def _require_terminal(trajectory: Trajectory) -> None:
    if not trajectory.terminal:
        raise EnvError(f"trajectory {trajectory.trajectory_id!r} is not terminal")


def assign_process_rewards(trajectory: Trajectory, label: ProcessRewardLabel) -> Trajectory:
    """r_t = 1 for strategist turns listed in the label, else 0."""
    _require_terminal(trajectory)
    label.check_bounds(trajectory.T)
    chosen = set(label.indexes)
    return trajectory.with_process_rewards([1.0 if t in chosen else 0.0 for t in range(1, trajectory.T + 1)])


def terminal_only_rewards(trajectory: Trajectory, score_range: tuple[float, float] | None = None) -> list[float]:
    """Zero everywhere except r_T = final_score / max score.

    Returned as a plain list: these rewards are not binary, so they cannot live
    in the process_reward field of a Turn.
    """
    _require_terminal(trajectory)
    if score_range is None:
        from epo.envs import get_env

        score_range = get_env(trajectory.scenario_id.rsplit("-", 3)[0]).score_range
    top = float(score_range[1])
    rewards = [0.0] * trajectory.T
    if rewards:
        rewards[-1] = trajectory.final_score / top
    return rewards


def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")


def discounted_returns(rewards: Sequence[float], gamma: float = DEFAULT_GAMMA) -> list[float]:
    _check_gamma(gamma)
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        r = float(rewards[t])
        if not math.isfinite(r):
            raise ValueError(f"reward {t + 1} is not finite: {r}")
        acc = r + gamma * acc
        out[t] = acc
    return out


def advantages(returns: Sequence[float]) -> list[float]:
    """A_t = R_t / max|R|, or all zeros when every return is zero."""
    m = max((abs(float(r)) for r in returns), default=0.0)
    if m == 0.0:
        return [0.0] * len(returns)
    return [float(r) / m for r in returns]


@dataclass(frozen=True)
class AdvantageTable:
    gamma: float
    returns: tuple[float, ...]
    advantages: tuple[float, ...]
    max_abs_return: float

    @property
    def T(self) -> int:
        return len(self.returns)

    @classmethod
    def from_rewards(cls, rewards: Sequence[float], gamma: float = DEFAULT_GAMMA) -> AdvantageTable:
        returns = discounted_returns(rewards, gamma)
        # Advantages come from rewards pre-divided by max|r|. For rewards in
        # {0, c} that division is exact, so scaling every reward by c > 0
        # reproduces the same advantages bit for bit.
        scale = max((abs(float(r)) for r in rewards), default=0.0)
        unit = [float(r) / scale for r in rewards] if scale > 0 else [0.0] * len(rewards)
        adv = advantages(discounted_returns(unit, gamma))
        return cls(gamma, tuple(returns), tuple(adv), max((abs(r) for r in returns), default=0.0))

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "returns": list(self.returns),
            "advantages": list(self.advantages),
            "max_abs_return": self.max_abs_return,
        }


def trajectory_rewards(
    trajectory: Trajectory, mode: RewardMode | str, score_range: tuple[float, float] | None = None
) -> list[float] | None:
    """Per-strategist-turn rewards under a mode; None when a PRM label is missing."""
    mode = RewardMode.parse(mode)
    if mode is RewardMode.TERMINAL_ONLY:
        return terminal_only_rewards(trajectory, score_range)
    rewards = trajectory.process_rewards
    if any(r is None for r in rewards):
        return None
    return [float(r) for r in rewards]


def label_trajectory(
    prm,
    trajectory: Trajectory,
    templates: Mapping[TemplateRole, PromptTemplate] | None = None,
    scenario: Scenario | None = None,
) -> ProcessRewardLabel | LabelFailure:
    """Ask a judge (oracle or chat) for the critical strategy indexes."""
    _require_terminal(trajectory)
    if scenario is None:
        from epo.envs import get_env

        scenario = get_env(trajectory.scenario_id.rsplit("-", 3)[0]).scenario_by_id(trajectory.scenario_id)
    if templates is None:
        from epo.core import load_templates

        templates = load_templates(scenario.env_id)
    result = prm.label(trajectory, scenario, templates)
    if isinstance(result, ProcessRewardLabel):
        try:
            result.check_bounds(trajectory.T)
        except ValueError as exc:
            return LabelFailure(trajectory.trajectory_id, str(exc))
    return result


def label_batch(
    prm, trajectories: Sequence[Trajectory], scenarios: Mapping[str, Scenario] | None = None
) -> tuple[list[Trajectory], list[LabelFailure]]:
    """Label and fill process rewards; failures are returned separately."""
    from epo.core import load_templates

    kept, failed = [], []
    cache: dict[str, Mapping] = {}
    for traj in trajectories:
        scenario = (scenarios or {}).get(traj.scenario_id)
        env_id = scenario.env_id if scenario else traj.scenario_id.rsplit("-", 3)[0]
        if env_id not in cache:
            cache[env_id] = load_templates(env_id)
        result = label_trajectory(prm, traj, cache[env_id], scenario)
        if isinstance(result, LabelFailure):
            failed.append(result)
        else:
            kept.append(assign_process_rewards(traj, result))
    return kept, failed

