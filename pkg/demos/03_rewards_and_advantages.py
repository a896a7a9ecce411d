"""From a finished episode to per-strategy advantages."""

# %% Collect one negotiation episode
from epo.backends.actors import ScriptedActor
from epo.backends.prm import OraclePRM
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.envs import get_env
from epo.reward import AdvantageTable, assign_process_rewards, label_trajectory, terminal_only_rewards
from epo.rollout import EpoInstance, RolloutConfig, run_batch

neg = get_env("negotiation")
scenario = neg.make_scenario("train", 0, 6)
inst = EpoInstance(ContextSoftmaxPolicy(neg.vocabulary.names), ScriptedActor("negotiation"))
buyer, _ = run_batch([scenario], [inst, inst], neg, RolloutConfig(seed=2)).trajectories

# %% The oracle judge replays the episode and marks the strategies that moved it
label = label_trajectory(OraclePRM(), buyer, scenario=scenario)
print("critical strategies:", label.indexes, "|", label.reasoning)
rewarded = assign_process_rewards(buyer, label)
print("process rewards:", rewarded.process_rewards)

# %% Discounted returns, then advantages scaled by the largest return
table = AdvantageTable.from_rewards(rewarded.process_rewards, gamma=0.99)
for t, (tok, R, A) in enumerate(zip([x.strategy.rendered for x in rewarded.strategist_turns], table.returns, table.advantages), 1):
    print(f"  t={t:2d} {tok:15s} R={R:6.3f} A={A:6.3f}")

# %% Terminal-only credit puts the whole episode score on the last strategy
print("\nterminal-only rewards:", terminal_only_rewards(buyer, neg.score_range))

# %% Scaling every reward by a positive constant leaves the advantages unchanged
scaled = AdvantageTable.from_rewards([3.7 * r for r in rewarded.process_rewards])
print("advantages identical after scaling by 3.7:", scaled.advantages == table.advantages)
