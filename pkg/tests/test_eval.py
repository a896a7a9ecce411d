import json

import numpy as np
import pytest

from epo.backends.softmax import ContextSoftmaxPolicy
from epo.envs import get_env
from epo.evaluation import EvalConfig, config_matrix, evaluate, evaluate_pair, format_table, matrix_csv
from epo.rollout import Decoding


def test_mean_is_mean_of_scenario_scores():
    env = get_env("shop")
    r = evaluate(ContextSoftmaxPolicy(env.vocabulary.names), env, env.scenarios(20), EvalConfig(seed=1, decoding="sample"))
    assert len(r.scores) == 20
    assert r.mean_score == pytest.approx(np.mean(r.scores))
    assert r.stderr == pytest.approx(np.std(r.scores, ddof=1) / np.sqrt(20))


def test_single_scenario_mean_equals_its_score():
    env = get_env("household")
    s = env.scenarios(1)
    r = evaluate(None, env, s, EvalConfig())
    assert r.mean_score == r.scores[0] and r.stderr == 0.0


def test_default_decoding_per_env():
    assert EvalConfig().resolved_decoding("shop") is Decoding.GREEDY
    assert EvalConfig().resolved_decoding("household") is Decoding.GREEDY
    assert EvalConfig().resolved_decoding("negotiation") is Decoding.SAMPLE


def test_evaluation_leaves_policy_untouched():
    env = get_env("negotiation")
    p = ContextSoftmaxPolicy(env.vocabulary.names)
    p.set_row("buyer|start|", np.arange(8.0))
    digest, version = p.param_digest(), p.version()
    evaluate(p, env, env.scenarios(8), EvalConfig(temperature=0.5))
    assert p.param_digest() == digest and p.version() == version and p.temperature == 1.0


def test_no_strategist_baseline_is_recorded():
    env = get_env("negotiation")
    r = evaluate(None, env, env.scenarios(6), EvalConfig(), label="no-strategist")
    assert r.label == "no-strategist" and set(r.side_means) == {"buyer", "seller"}
    assert r.average_payoff == pytest.approx(np.mean(list(r.side_means.values())))


def test_two_by_two_matrix_is_reproducible():
    env = get_env("negotiation")
    pols = {"u1": ContextSoftmaxPolicy(env.vocabulary.names), "bare": None}
    scenarios = env.scenarios(6, split="test")
    m1 = config_matrix(pols, env, scenarios, EvalConfig(seed=3))
    m2 = config_matrix(pols, env, scenarios, EvalConfig(seed=3))
    assert list(m1) == [("u1", "u1"), ("u1", "bare"), ("bare", "u1"), ("bare", "bare")]
    assert matrix_csv(m1) == matrix_csv(m2)
    assert len(matrix_csv(m1).splitlines()) == 5
    assert "u1 vs bare" in format_table(list(m1.values()))


def test_symmetric_pairing_gives_close_side_means():
    env = get_env("negotiation")
    p = ContextSoftmaxPolicy(env.vocabulary.names)
    r = evaluate_pair(p, p, env, env.scenarios(200, split="symmetric"), EvalConfig(seed=0))
    assert abs(r.side_means["buyer"] - r.side_means["seller"]) < 0.75


def test_pair_needs_two_party_env():
    env = get_env("shop")
    with pytest.raises(ValueError):
        evaluate_pair(None, None, env, env.scenarios(1))


def test_report_serializes():
    env = get_env("shop")
    r = evaluate(None, env, env.scenarios(2))
    assert json.loads(r.to_json())["scenario_ids"] == list(r.scenario_ids)
