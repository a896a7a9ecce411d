from dataclasses import replace

import numpy as np
import pytest

from epo.backends.actors import ScriptedActor
from epo.backends.prm import OraclePRM
from epo.backends.softmax import ContextSoftmaxPolicy, base_context_key
from epo.envs import get_env
from epo.envs.base import ProcessRewardLabel
from epo.reward import assign_process_rewards, label_batch
from epo.rollout import EpoInstance, RolloutConfig, run_batch
from epo.train import (
    LossError,
    NoTrainableDataError,
    RunConfig,
    Schedule,
    StrategyItem,
    TrainConfig,
    TrajectoryItem,
    UpdateBatch,
    build_items,
    loss_gradient,
    lr_at_step,
    reinforce_loss,
    reinforce_objective,
    self_play_rl,
    train_iteration,
    warmup_steps,
)

VOCAB = ("a", "b", "c", "d")


def test_worked_example_loss():
    loss = reinforce_objective([[1.0, 0.5]], [[[-0.1, -0.2], [-0.3]]])
    assert loss == pytest.approx(0.15, abs=1e-12)


def test_nan_logprob_names_item():
    with pytest.raises(LossError, match="item 1"):
        reinforce_objective([[1.0], [1.0]], [[[-0.1]], [[float("nan")]]])


def _random_batch(rng, n_items=4, n_keys=3, max_k=3):
    items = []
    for n in range(n_items):
        strategies = []
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.integers(1, max_k + 1))
            keys = tuple(f"ctx{int(rng.integers(n_keys))}" for _ in range(k))
            toks = tuple(VOCAB[int(rng.integers(4))] for _ in range(k))
            strategies.append(StrategyItem(keys, toks, float(rng.uniform(-1, 1))))
        items.append(TrajectoryItem(tuple(strategies), f"t{n}"))
    return UpdateBatch(tuple(items))


def _random_policy(rng, n_keys=3, temperature=1.0):
    p = ContextSoftmaxPolicy(VOCAB, temperature=temperature)
    for i in range(n_keys):
        p.set_row(f"ctx{i}", rng.normal(size=4))
    return p


def test_zero_advantages_zero_loss_and_gradient():
    rng = np.random.default_rng(0)
    batch = _random_batch(rng).scaled(0.0)
    p = _random_policy(rng)
    assert reinforce_loss(batch, p) == 0.0
    assert all(not np.any(g) for g in loss_gradient(batch, p).values())


def test_loss_is_linear_in_advantages():
    rng = np.random.default_rng(1)
    batch, p = _random_batch(rng), _random_policy(rng)
    assert reinforce_loss(batch.scaled(2.5), p) == pytest.approx(2.5 * reinforce_loss(batch, p), rel=1e-12)


def test_single_item_gradient_sign():
    p = ContextSoftmaxPolicy(VOCAB)
    batch = UpdateBatch((TrajectoryItem((StrategyItem(("k",), ("a",), 1.0),)),))
    g = loss_gradient(batch, p)["k"]
    assert g == pytest.approx(-np.array([0.75, -0.25, -0.25, -0.25]))
    p.apply_gradient({"k": g}, 1.0)
    assert p.probabilities("k")[0] > 0.25


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    batch, p = _random_batch(rng), _random_policy(rng, temperature=float(rng.uniform(0.5, 2)))
    grad = loss_gradient(batch, p)
    for key, g in grad.items():
        row = p.row(key)
        fd = np.zeros(4)
        for j in range(4):
            for sign in (1, -1):
                r = row.copy()
                r[j] += sign * 1e-5
                p.set_row(key, r)
                fd[j] += sign * reinforce_loss(batch, p) / 2e-5
            p.set_row(key, row)
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-8) <= 1e-5


def test_lr_schedule_endpoints():
    cfg = TrainConfig(learning_rate=2.0)
    total = 100
    w = warmup_steps(cfg, total)
    assert w == 3
    assert lr_at_step(cfg, 0, total) == 0.0
    assert lr_at_step(cfg, w, total) == pytest.approx(2.0)
    assert lr_at_step(cfg, total - 1, total) < 0.01
    assert lr_at_step(TrainConfig(learning_rate=2.0, schedule=Schedule.CONSTANT), total - 1, total) == 2.0
    with pytest.raises(ValueError):
        lr_at_step(cfg, total, total)


def _shop_data(n=64, seed=0):
    env = get_env("shop")
    policy = ContextSoftmaxPolicy(env.vocabulary.names)
    inst = EpoInstance(policy, ScriptedActor("shop"))
    trajs = run_batch(env.scenarios(n, seed=seed), inst, env, RolloutConfig(seed=seed)).trajectories
    return env, policy, trajs


def test_three_epochs_of_64_items_is_six_steps():
    env, policy, trajs = _shop_data()
    labeled, _ = label_batch(OraclePRM(), trajs)
    items, kept, _ = build_items(labeled, "prm", 0.99, env)
    assert len(items) == 64
    _, report = train_iteration(policy, labeled, TrainConfig(epochs=3, batch_size=32), env)
    assert report.steps == 6 and policy.version() == "toy-v6"


def test_zero_advantage_update_keeps_parameters():
    env, policy, trajs = _shop_data(16)
    labeled = [assign_process_rewards(t, ProcessRewardLabel(())) for t in trajs]
    before = policy.param_digest()
    train_iteration(policy, labeled, TrainConfig(), env)
    assert policy.param_digest() == before


def test_planted_good_token_gains_probability():
    env, policy, trajs = _shop_data(32, seed=2)
    good = "search_specific"
    labeled = []
    for t in trajs:
        # one strategist turn per episode, rewarded only for the good token
        first = replace(t, turns=t.turns[:1])
        idx = (1,) if first.turns[0].strategy.tokens[0] == good else ()
        labeled.append(assign_process_rewards(first, ProcessRewardLabel(idx)))
    assert any(t.process_rewards == [1.0] for t in labeled)
    key = base_context_key("agent", "search", [])
    before = policy.probabilities(key)[env.vocabulary.index(good)]
    train_iteration(policy, labeled, TrainConfig(learning_rate=1.0), env)
    assert policy.probabilities(key)[env.vocabulary.index(good)] > before


def test_no_trainable_data():
    env = get_env("shop")
    with pytest.raises(NoTrainableDataError, match="no trainable data"):
        train_iteration(ContextSoftmaxPolicy(env.vocabulary.names), [], TrainConfig(), env)


def test_unlabeled_trajectories_are_dropped():
    env, policy, trajs = _shop_data(4)
    with pytest.raises(NoTrainableDataError):
        train_iteration(policy, trajs, TrainConfig(), env)


def test_zero_iterations_is_a_no_op():
    env = get_env("negotiation")
    policy = ContextSoftmaxPolicy(env.vocabulary.names)
    before = policy.param_digest()
    assert self_play_rl(RunConfig(train=TrainConfig(iterations=0)), policy) == []
    assert policy.param_digest() == before and policy.version() == "toy-v0"


def test_short_run_is_on_policy_with_frozen_actor(tmp_path):
    env = get_env("negotiation")
    policy = ContextSoftmaxPolicy(env.vocabulary.names)
    actor = ScriptedActor("negotiation")
    digest = actor.digest()
    seen = []

    def check(report, trajs):
        seen.append(report)
        assert {t.policy_version for t in trajs} == {report.version_before}

    cfg = RunConfig(train=TrainConfig(iterations=2, scenarios_per_iteration=8), seed=1)
    reports = self_play_rl(cfg, policy, actor, out_dir=tmp_path, on_iteration=check)
    assert len(reports) == len(seen) == 2
    assert reports[1].version_before == reports[0].version_after != reports[0].version_before
    assert actor.digest() == digest
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"policy_version": "toy-v0"' in lines[0]


def test_config_round_trip():
    cfg = RunConfig(env_id="shop", train=TrainConfig(reward_mode="terminal", iterations=3), seed=4)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rat": 1.0})
