"""Chat-service strategist, actor and judge, exercised against an in-process mock server."""

# %% A mock chat endpoint
import json

import httpx

from epo.backends.chat import ChatActor, ChatServiceClient, ChatStrategist
from epo.backends.prm import ChatPRM, LabelFailure
from epo.core import load_templates
from epo.envs import get_env
from epo.rollout import EpoInstance, RolloutConfig, run_episode

flaky = {"left": 2}


def handler(request: httpx.Request) -> httpx.Response:
    body = json.loads(request.content)
    system = body["messages"][0]["content"]
    if flaky["left"]:
        flaky["left"] -= 1
        return httpx.Response(503, text="warming up")
    if body["messages"][-1]["content"] == "Select the critical strategies.":
        reply = '{"indexes": [1], "reasoning": "the first search found the item"}'
    elif system.startswith("You are the planner"):
        reply = "Strategy: search with every required attribute"
    else:
        reply = "search[boots, waterproof, leather]"
    return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})


client = ChatServiceClient("http://mock/v1/chat", "mock-model", transport=httpx.MockTransport(handler), sleep=lambda s: None)
print(client.complete([{"role": "user", "content": "hello"}]), "(after two 503 retries)")

# %% A chat strategist and actor in the usual rollout loop
shop = get_env("shop")
templates = load_templates("shop")
inst = EpoInstance(ChatStrategist(client, templates), ChatActor(client, templates))
traj = run_episode(shop.make_scenario("train", 0, 0), inst, shop, RolloutConfig(max_turns=2))
for turn in traj.turns:
    print(f"  strategy: {turn.strategy.rendered!r} -> action: {turn.behavior.content!r}")

# %% The chat judge retries once with a JSON reminder, then gives up
judge = ChatPRM(client)
scenario = shop.make_scenario("train", 0, 0)
print("label:", judge.label(traj, scenario, templates))

prose = ChatServiceClient(
    "http://mock", "m",
    transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "The first one."}}]})),
)
result = ChatPRM(prose).label(traj, scenario, templates)
print("prose twice ->", type(result).__name__, isinstance(result, LabelFailure))
