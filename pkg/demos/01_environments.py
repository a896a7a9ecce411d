"""Tour of the three text environments and their scripted actor."""

# %% Registry
from epo.envs import get_env, registered_envs

print("environments:", registered_envs())
for env_id in registered_envs():
    env = get_env(env_id)
    print(f"  {env_id:12s} cap {env.default_max_turns:3d} turns, scores in {env.score_range}, vocabulary {len(env.vocabulary)}")

# %% Negotiation: two sides, private targets, a public listing
neg = get_env("negotiation")
scenario = neg.make_scenario("train", seed=0, index=0)
print("\n" + scenario.context)
for pid in neg.participants(scenario):
    print(f"  {pid}'s own view:", scenario.participant_view(pid))

state, first = neg.reset(scenario)
print("buyer sees:", first["buyer"].content)

# A few hand-written moves: the buyer concedes, the seller accepts.
for pid, move in [("buyer", "offer 1900"), ("seller", "offer 2300 #value"), ("buyer", "offer 2000"), ("seller", "accept")]:
    result = neg.step(state, pid, move)
    state = result.state
    print(f"  {pid:6s} {move:20s} gap now {neg.gap(state.data):7.0f} done={state.done}")
print("scores:", {pid: round(neg.score(state, pid), 2) for pid in ("buyer", "seller")})

# %% Shop: search, open an item, buy
shop = get_env("shop")
scenario = shop.make_scenario("test", seed=0, index=3)
print("\n" + scenario.goals[0].description)
state, first = shop.reset(scenario)
required = scenario.params["required"]
for move in [f"search[{', '.join(required)}]", None, "click[buy now]"]:
    if move is None:
        move = f"click[{state.data['results'][0]}]"
    result = shop.step(state, "agent", move)
    state = result.state
    shown = result.observations.get("agent")
    print(f"  {move:45s} -> {shown.content[:70] + '...' if shown else '(episode over)'}")
print("purchase reward:", shop.score(state, "agent"))

# %% Household: invalid commands are answered, not raised
house = get_env("household")
scenario = house.make_scenario("unseen", seed=0, index=1)
print("\n" + scenario.goals[0].description)
state, _ = house.reset(scenario)
for move in ["dance", "go to countertop 1", "look"]:
    result = house.step(state, "agent", move)
    state = result.state
    print(f"  {move:20s} -> {result.observations['agent'].content[:80]}")

# %% The scripted actor turns a strategy token into text for the current state
# (it declines to accept a price far from its own target and restates its offer)
from epo.backends.actors import scripted_actor
from epo.core import Strategy

state, _ = neg.reset(neg.make_scenario("train", 0, 0))
goal = neg.make_scenario("train", 0, 0).goal_for("buyer").params
for token in neg.vocabulary.names + ("made_up_token",):
    print(f"  {token:15s} -> {scripted_actor(Strategy((token,)), state, 'buyer', goal).content}")
