"""Iterative self-play training on negotiation, then a held-out comparison of reward modes."""

# %% Train with process rewards from the oracle judge
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.envs import get_env
from epo.evaluation import EvalConfig, evaluate, format_table
from epo.train import RunConfig, TrainConfig, self_play_rl


def train(mode: str) -> ContextSoftmaxPolicy:
    env = get_env("negotiation")
    policy = ContextSoftmaxPolicy(env.vocabulary.names)
    config = RunConfig(env_id="negotiation", seed=7, train=TrainConfig(reward_mode=mode))
    for r in self_play_rl(config, policy):
        print(f"  [{mode}] iteration {r.iteration}: mean score {r.mean_score:5.2f}  loss {r.mean_loss:+.4f}  kept {r.kept}")
    return policy


prm_policy = train("prm")

# %% The same run with only the final score as reward
terminal_policy = train("terminal_only")

# %% Held-out scenarios, sampled decoding
env = get_env("negotiation")
scenarios = env.scenarios(256, split="test", seed=7)
config = EvalConfig(seed=123)
reports = [
    evaluate(prm_policy, env, scenarios, config, "process rewards"),
    evaluate(terminal_policy, env, scenarios, config, "terminal only"),
    evaluate(ContextSoftmaxPolicy(env.vocabulary.names), env, scenarios, config, "untrained"),
    evaluate(None, env, scenarios, config, "no strategist"),
]
print()
print(format_table(reports))

# %% What the trained buyer prefers at the opening
probs = prm_policy.probabilities("buyer|start|")
for name, p in sorted(zip(env.vocabulary.names, probs), key=lambda x: -x[1])[:3]:
    print(f"  {name:15s} {p:.3f}")
