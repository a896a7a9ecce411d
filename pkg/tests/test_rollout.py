import pytest

from epo.backends.actors import ScriptedActor
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.core import Behavior, Source
from epo.envs import get_env
from epo.rollout import (
    NO_STRATEGIST_VERSION,
    Decoding,
    EpisodeError,
    EpoInstance,
    RolloutConfig,
    run_batch,
    run_episode,
    self_play_episode,
)

from conftest import FailingStrategist, ScriptedStrategist


def _uniform(env, **kw):
    return EpoInstance(ContextSoftmaxPolicy(env.vocabulary.names, **kw), ScriptedActor(env.env_id))


def test_rollout_config_validation():
    with pytest.raises(ValueError):
        RolloutConfig(temperature=0.0)
    assert RolloutConfig(decoding="greedy", temperature=0.0).decoding is Decoding.GREEDY
    with pytest.raises(ValueError):
        RolloutConfig(max_turns=0)


def test_ablation_has_no_strategies():
    env = get_env("shop")
    s = env.make_scenario("train", 0, 0)
    t = run_episode(s, _uniform(env), env, RolloutConfig(strategist_enabled=False))
    assert t.turns and all(turn.strategy is None for turn in t.turns)
    assert t.T == 0 and t.policy_version == NO_STRATEGIST_VERSION


@pytest.mark.parametrize("env_id", ["shop", "household"])
def test_greedy_runs_repeat_exactly(env_id):
    env = get_env(env_id)
    s = env.make_scenario("train", 1, 2)
    cfg = RolloutConfig(seed=5, decoding="greedy")
    inst = _uniform(env)
    assert run_episode(s, inst, env, cfg) == run_episode(s, inst, env, cfg)


@pytest.mark.parametrize("index", range(10))
def test_shop_optimal_strategy_sequence_scores_one(index):
    env = get_env("shop")
    s = env.make_scenario("test", 0, index)
    inst = EpoInstance(ScriptedStrategist(["search_specific", "open_first", "buy_now"]), ScriptedActor("shop"))
    t = run_episode(s, inst, env, RolloutConfig(decoding="greedy"))
    assert t.terminal and t.final_score == 1.0 and t.T == 3


def test_turn_cap_override_is_min_with_env_default():
    env = get_env("household")
    s = env.make_scenario("train", 0, 0)
    inst = EpoInstance(ScriptedStrategist(["look_around"]), ScriptedActor("household"))
    t = run_episode(s, inst, env, RolloutConfig(max_turns=7))
    assert len(t.turns) == 7 and t.terminal
    t = run_episode(s, inst, env, RolloutConfig(max_turns=500))
    assert len(t.turns) == 40


def test_self_play_privacy_and_alternation():
    env = get_env("negotiation")
    s = env.make_scenario("train", 0, 3)
    seen = []

    class Spy(ScriptedActor):
        def act(self, context, state, pid):
            seen.append((pid, context.goal))
            return super().act(context, state, pid)

    a = EpoInstance(ContextSoftmaxPolicy(env.vocabulary.names), Spy("negotiation"))
    buyer, seller = self_play_episode(s, a, a, env, RolloutConfig(seed=2))
    for pid, goal in seen:
        assert goal == s.goal_for(pid)
    assert seller.turns[0].observation.source is Source.PARTNER
    assert buyer.turns[0].observation.source is Source.ENVIRONMENT
    # the seller's first observation is the buyer's first move
    assert seller.turns[0].observation.content == buyer.turns[0].behavior.content
    for t in (buyer, seller):
        assert all(turn.behavior.actor_id == t.participant_id for turn in t.turns)


def test_self_play_is_replayable():
    env = get_env("negotiation")
    s = env.make_scenario("train", 0, 4)
    inst = _uniform(env)
    cfg = RolloutConfig(seed=11)
    assert self_play_episode(s, inst, inst, env, cfg) == self_play_episode(s, inst, inst, env, cfg)


def test_accept_at_first_turn():
    env = get_env("negotiation")
    s = env.make_scenario("train", 0, 5)

    class Accepts:
        def act(self, context, state, pid):
            return Behavior("accept", pid)

        def digest(self):
            return "accepts"

    inst = EpoInstance(ScriptedStrategist(["accept"]), Accepts())
    buyer, seller = self_play_episode(s, inst, inst, env, RolloutConfig())
    assert len(buyer.turns) == 1 and len(seller.turns) == 0
    state, _ = env.reset(s)
    end = env.step(state, "buyer", "accept").state
    assert buyer.final_score == env.score(end, "buyer")
    assert seller.final_score == env.score(end, "seller")


def test_parallelism_does_not_change_output():
    env = get_env("negotiation")
    scenarios = env.scenarios(12, seed=3)
    inst = _uniform(env)
    one = run_batch(scenarios, [inst, inst], env, RolloutConfig(seed=9), parallelism=1)
    four = run_batch(scenarios, [inst, inst], env, RolloutConfig(seed=9), parallelism=4)
    assert one.trajectories == four.trajectories and not one.errors


def test_one_failure_in_ten():
    env = get_env("shop")
    scenarios = env.scenarios(10)
    good = EpoInstance(ScriptedStrategist(["search_specific", "open_first", "buy_now"]), ScriptedActor("shop"))
    bad = EpoInstance(FailingStrategist(["x"]), ScriptedActor("shop"))

    class Router:
        # fails on the fourth scenario's goal
        def _choose(self, ctx):
            return bad.strategist if ctx.goal == scenarios[3].goals[0] else good.strategist

        def sample(self, ctx, rng):
            return self._choose(ctx).sample(ctx, rng)

        def greedy_decode(self, ctx):
            return self._choose(ctx).greedy_decode(ctx)

        def version(self):
            return "router"

    # goals can repeat across scenarios, so count every match
    result = run_batch(scenarios, EpoInstance(Router(), ScriptedActor("shop")), env, RolloutConfig(), parallelism=3)
    n_bad = sum(1 for s in scenarios if s.goals[0] == scenarios[3].goals[0])
    assert len(result.trajectories) == 10 - n_bad
    assert len(result.errors) == n_bad and result.errors[0].index == 3
    assert "backend unavailable" in result.errors[0].message


def test_episode_error_carries_partial_trajectory():
    env = get_env("shop")
    s = env.make_scenario("train", 0, 0)

    class FailsLater(ScriptedStrategist):
        def _pick(self, ctx):
            if len(ctx.strategies) == 2:
                raise RuntimeError("boom")
            return super()._pick(ctx)

    with pytest.raises(EpisodeError) as exc:
        run_episode(s, EpoInstance(FailsLater(["go_back"]), ScriptedActor("shop")), env, RolloutConfig())
    assert len(exc.value.partial[0].turns) == 2 and not exc.value.partial[0].terminal


def test_empty_batch():
    env = get_env("shop")
    result = run_batch([], _uniform(env), env, RolloutConfig(), parallelism=4)
    assert result.trajectories == [] and result.errors == []


def test_trajectories_carry_current_version_and_scores():
    env = get_env("negotiation")
    policy = ContextSoftmaxPolicy(env.vocabulary.names)
    inst = EpoInstance(policy, ScriptedActor("negotiation"))
    result = run_batch(env.scenarios(5), [inst, inst], env, RolloutConfig(seed=1))
    for t in result.trajectories:
        assert t.policy_version == policy.version() and t.terminal
        t.check_score_range(*env.score_range)
