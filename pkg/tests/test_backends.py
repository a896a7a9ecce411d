import json
import math
from dataclasses import replace

import httpx
import numpy as np
import pytest

from epo.backends import (
    ChatPRM,
    ChatServiceClient,
    ChatServiceError,
    ChatStrategist,
    ChatTransportError,
    ContextSoftmaxPolicy,
    GreedyModeError,
    LabelFailure,
    OraclePRM,
    PRMParseError,
    ProcessRewardLabel,
    ScriptedActor,
    StrategistContext,
    parse_prm_response,
    render_prm_label,
    scripted_actor,
    softmax_grad,
    softmax_logprob,
)
from epo.backends.prm import first_json_object
from epo.core import Goal, Observation, Source, Strategy, load_templates
from epo.envs import get_env
from epo.envs.negotiation import BUYER, SELLER

VOCAB = ("a", "b", "c", "d")


# --- softmax policy -------------------------------------------------------


def test_uniform_logprob_is_minus_ln4():
    p = ContextSoftmaxPolicy(VOCAB)
    for tok in range(4):
        assert softmax_logprob(p, "fresh", tok) == pytest.approx(-math.log(4), abs=1e-12)


def test_one_hot_logit_logprob():
    p = ContextSoftmaxPolicy(VOCAB)
    p.set_row("k", [1.0, 0.0, 0.0, 0.0])
    expected = 1.0 - math.log(math.e + 3)
    assert softmax_logprob(p, "k", 0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-0.7437, abs=1e-4)


def test_temperature_zero_requires_greedy():
    p = ContextSoftmaxPolicy(VOCAB, temperature=0.0)
    with pytest.raises(GreedyModeError, match="greedy mode: use greedy_decode"):
        p.softmax_logprob("k", 0)


def test_uniform_gradient_values():
    p = ContextSoftmaxPolicy(VOCAB)
    g = softmax_grad(p, "k", 1)
    assert g[1] == pytest.approx(0.75)
    assert g[0] == g[2] == g[3] == pytest.approx(-0.25)


@pytest.mark.parametrize("temperature", [0.5, 1.0, 2.0])
def test_gradient_matches_finite_differences(temperature):
    rng = np.random.default_rng(3)
    p = ContextSoftmaxPolicy(VOCAB, temperature=temperature)
    for _ in range(20):
        row = rng.normal(size=4) * 2
        p.set_row("k", row)
        tok = int(rng.integers(4))
        g = p.softmax_grad("k", tok)
        fd = np.zeros(4)
        for j in range(4):
            for sign in (1, -1):
                r = row.copy()
                r[j] += sign * 1e-5
                p.set_row("k", r)
                fd[j] += sign * p.softmax_logprob("k", tok) / 2e-5
        p.set_row("k", row)
        err = np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-12)
        assert err <= 1e-6


def _ctx(obs_text="start", n_prev=0):
    goal = Goal("p", "do it", "x")
    return StrategistContext(goal, (), tuple(Strategy(("a",)) for _ in range(n_prev)), Observation(1, Source.ENVIRONMENT, obs_text), "start")


def test_sampling_frequencies_follow_softmax():
    p = ContextSoftmaxPolicy(VOCAB)
    ctx = _ctx()
    from epo.backends.softmax import context_key

    p.set_row(context_key(ctx), [2.0, 1.0, 0.0, -1.0])
    probs = p.probabilities(context_key(ctx))
    rng = np.random.default_rng(0)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        counts[VOCAB.index(p.sample(ctx, rng).tokens[0])] += 1
    # 4 standard errors
    assert np.all(np.abs(counts / n - probs) <= 4 * np.sqrt(probs * (1 - probs) / n))


def test_greedy_decode_is_argmax_and_ties_go_low():
    p = ContextSoftmaxPolicy(VOCAB, temperature=0.0)
    assert p.greedy_decode(_ctx()).tokens == ("a",)
    from epo.backends.softmax import context_key

    p.set_row(context_key(_ctx()), [0, 0, 3, 3])
    assert p.greedy_decode(_ctx()).tokens == ("c",)


def test_policy_snapshot_round_trip(tmp_path):
    p = ContextSoftmaxPolicy(VOCAB, 0.7, 2)
    p.set_row("k", [1, 2, 3, 4])
    p.save(tmp_path / "p.json")
    q = ContextSoftmaxPolicy.load(tmp_path / "p.json")
    assert q.param_digest() == p.param_digest() and q.version() == p.version()


# --- chat client ----------------------------------------------------------


def _reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def _client(handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return ChatServiceClient("http://chat.test/v1/chat", "m", transport=httpx.MockTransport(handler), seed=0, **kw)


MSG = [{"role": "user", "content": "hi"}]


def test_chat_echo():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        return _reply("Strategy: hold firm")

    assert _client(handler).complete(MSG) == "Strategy: hold firm"
    assert seen[0]["model"] == "m" and seen[0]["messages"] == MSG


def test_chat_retries_5xx_then_succeeds():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, text="busy") if len(calls) <= 2 else _reply("ok")

    client = _client(handler, sleep=sleeps.append)
    assert client.complete(MSG) == "ok"
    assert len(calls) == 3
    assert len(sleeps) == 2
    assert 0.4 <= sleeps[0] <= 0.6 and 0.8 <= sleeps[1] <= 1.2


def test_chat_timeout_is_transport_error():
    def handler(request):
        raise httpx.ReadTimeout("server slower than timeout", request=request)

    with pytest.raises(ChatTransportError) as exc:
        _client(handler, timeout=0.01, max_retries=2).complete(MSG)
    assert exc.value.attempts == 3


def test_chat_4xx_is_service_error_without_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    with pytest.raises(ChatServiceError) as exc:
        _client(handler).complete(MSG)
    assert exc.value.status == 401 and "bad key" in exc.value.body
    assert len(calls) == 1


def test_chat_persistent_5xx_is_service_error():
    with pytest.raises(ChatServiceError) as exc:
        _client(lambda r: httpx.Response(503, text="down"), max_retries=1).complete(MSG)
    assert exc.value.status == 503


def test_chat_strategist_takes_first_line():
    client = _client(lambda r: _reply("Strategy: concede a little\nbecause reasons"))
    strat = ChatStrategist(client, load_templates("negotiation"))
    s = strat.greedy_decode(_ctx())
    assert s.rendered == "concede a little"
    with pytest.raises(NotImplementedError):
        strat.update(None, 0.1)


# --- PRM parsing ----------------------------------------------------------


@pytest.mark.parametrize(
    "text,T,expected",
    [
        ('{"indexes":[1,3],"reasoning":"turns 1,3 moved price"}', 4, (1, 3)),
        ('{"indexes":[],"reasoning":"none critical"}', 4, ()),
        ('Sure! Here you go:\n```json\n{"indexes": [2], "reasoning": "a {brace} inside"}\n```', 3, (2,)),
        ('{"reasoning": "order swapped", "indexes": [3, 1, 3]}', 3, (1, 3)),
    ],
)
def test_prm_parse_valid(text, T, expected):
    assert parse_prm_response(text, T).indexes == expected


@pytest.mark.parametrize(
    "text,field",
    [
        ('{"indexes":[5],"reasoning":"r"}', "indexes"),
        ('{"indexes":[0],"reasoning":"r"}', "indexes"),
        ('{"reasoning":"r"}', "indexes"),
        ('{"indexes":[1]}', "reasoning"),
        ('{"indexes":"1","reasoning":"r"}', "indexes"),
        ('{"indexes":[1.5],"reasoning":"r"}', "indexes"),
        ("the first and third strategies mattered", None),
    ],
)
def test_prm_parse_rejects_with_named_error(text, field):
    with pytest.raises(PRMParseError) as exc:
        parse_prm_response(text, 4)
    assert exc.value.field == field
    assert exc.value.text == text


def test_parse_render_identity():
    rng = np.random.default_rng(5)
    for _ in range(200):
        T = int(rng.integers(1, 12))
        idx = tuple(sorted(rng.choice(np.arange(1, T + 1), size=int(rng.integers(0, T + 1)), replace=False).tolist()))
        label = ProcessRewardLabel(idx, "why: \"quoted\" {and braces}")
        assert parse_prm_response(render_prm_label(label), T) == label


def test_first_json_object_none_when_unbalanced():
    assert first_json_object('{"indexes": [1]') is None


def _negotiation_traj():
    env = get_env("negotiation")
    s = env.make_scenario("train", 0, 0)
    from epo.rollout import EpoInstance, RolloutConfig, run_batch

    inst = EpoInstance(ContextSoftmaxPolicy(env.vocabulary.names), ScriptedActor("negotiation"))
    t = run_batch([s], [inst, inst], env, RolloutConfig(seed=1)).trajectories[0]
    return s, t


def test_chat_prm_passthrough_and_retry():
    s, t = _negotiation_traj()
    replies = iter(["I think turn one.", '{"indexes":[1],"reasoning":"r"}'])
    seen = []

    def handler(request):
        seen.append(json.loads(request.content)["messages"])
        return _reply(next(replies))

    label = ChatPRM(_client(handler)).label(t, s, load_templates("negotiation"))
    assert label.indexes == (1,)
    assert len(seen) == 2 and "JSON only" in seen[1][-1]["content"]


def test_chat_prm_two_failures_is_label_failure():
    s, t = _negotiation_traj()
    result = ChatPRM(_client(lambda r: _reply("prose only"))).label(t, s, load_templates("negotiation"))
    assert isinstance(result, LabelFailure) and result.trajectory_id == t.trajectory_id


def test_oracle_prm_is_env_rule():
    s, t = _negotiation_traj()
    assert OraclePRM().label(t, s) == get_env("negotiation").oracle_label(t, s)


# --- scripted actor -------------------------------------------------------


def _negotiation_state(buyer=4000.0, seller=5000.0):
    env = get_env("negotiation")
    state, _ = env.reset(env.make_scenario("train", 0, 0))
    data = dict(state.data, prices={BUYER: buyer, SELLER: seller}, gap0=seller - buyer)
    return replace(state, data=data)


def test_concede_small_two_percent_of_gap():
    b = scripted_actor(Strategy(("concede_small",)), _negotiation_state(), BUYER, {"target": 4500.0, "band": 1000.0})
    assert b.content.startswith("offer 4020")
    b = scripted_actor(Strategy(("concede_small",)), _negotiation_state(), SELLER, {"target": 4500.0, "band": 1000.0})
    assert b.content.startswith("offer 4980")


def test_accept_maps_to_acceptance():
    state = _negotiation_state(4000.0, 4500.0)
    b = scripted_actor(Strategy(("accept",)), state, BUYER, {"target": 4500.0, "band": 1000.0})
    assert b.content == "accept"
    env = get_env("negotiation")
    assert env.step(state, BUYER, b.content).state.done


def test_unknown_token_holds_position():
    state = _negotiation_state()
    b = scripted_actor(Strategy(("xyz",)), state, BUYER, {"target": 4500.0, "band": 1000.0})
    assert b.content == "offer 4000 #firm"
    assert get_env("negotiation").step(state, BUYER, b.content).valid


def test_scripted_actor_digest_is_stable():
    assert ScriptedActor("shop").digest() == ScriptedActor("shop").digest()
    assert ScriptedActor("shop").digest() != ScriptedActor("household").digest()
