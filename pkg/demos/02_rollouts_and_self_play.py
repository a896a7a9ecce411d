"""A strategist proposes, a frozen actor acts: single-agent rollouts and two-sided self-play."""

# %% A uniform tabular strategist and the scripted actor
from epo.backends.actors import ScriptedActor
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.envs import get_env
from epo.rollout import EpoInstance, RolloutConfig, run_batch, run_episode, self_play_episode

shop = get_env("shop")
policy = ContextSoftmaxPolicy(shop.vocabulary.names)
agent = EpoInstance(policy, ScriptedActor("shop"))

traj = run_episode(shop.make_scenario("train", 0, 0), agent, shop, RolloutConfig(seed=1))
print(f"{traj.trajectory_id}: {len(traj.turns)} turns, score {traj.final_score}, policy {traj.policy_version}")
for turn in traj.turns:
    print(f"  [{turn.observation.turn_index}] {turn.strategy.rendered:16s} -> {turn.behavior.content}")

# %% The same actor without a strategist
bare = run_episode(shop.make_scenario("train", 0, 0), agent, shop, RolloutConfig(strategist_enabled=False))
print(f"\nwithout strategist: score {bare.final_score}, strategies {[t.strategy for t in bare.turns]}")

# %% Self-play: each side keeps its own goal and sees the other's moves
neg = get_env("negotiation")
inst = EpoInstance(ContextSoftmaxPolicy(neg.vocabulary.names), ScriptedActor("negotiation"))
buyer, seller = self_play_episode(neg.make_scenario("train", 0, 2), inst, inst, neg, RolloutConfig(seed=4))
print(f"\nbuyer score {buyer.final_score:.2f}, seller score {seller.final_score:.2f}")
for b in buyer.turns[:4]:
    print(f"  buyer  [{b.observation.turn_index:2d}] {b.strategy.rendered:15s} -> {b.behavior.content}")

# %% Batches are order-stable and independent of the worker count
scenarios = neg.scenarios(16, seed=3)
serial = run_batch(scenarios, [inst, inst], neg, RolloutConfig(seed=9), parallelism=1)
threaded = run_batch(scenarios, [inst, inst], neg, RolloutConfig(seed=9), parallelism=4)
print("\nparallel batch identical to serial:", serial.trajectories == threaded.trajectories)
