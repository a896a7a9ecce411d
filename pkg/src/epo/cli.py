"""Command-line entry point: ``epo <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every run writes
``<out>/run-<id>/manifest.json``, also when it fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from epo.backends.actors import ScriptedActor
from epo.backends.chat import ChatActor, ChatServiceClient, ChatStrategist
from epo.backends.prm import ChatPRM, LabelFailure, OraclePRM
from epo.backends.softmax import ContextSoftmaxPolicy
from epo.core import load_templates, read_trajectories, write_trajectories
from epo.envs import get_env, registered_envs
from epo.evaluation import EvalConfig, config_matrix, evaluate, format_table, matrix_csv
from epo.reward import RewardMode, assign_process_rewards, label_trajectory
from epo.rollout import EpoInstance, RolloutConfig, run_batch
from epo.train import RunConfig, TrainConfig, self_play_rl, train_iteration

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

ENV_VARS = {"EPO_CHAT_ENDPOINT": "chat_endpoint", "EPO_CHAT_MODEL": "chat_model", "EPO_CHAT_KEY": "chat_key"}
TRAIN_FIELDS = frozenset(TrainConfig.__dataclass_fields__)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "env": "negotiation",
    "out": "runs",
    "backend": "toy",
    "prm": "oracle",
    "reward_mode": "prm",
    "no_strategist": False,
    "parallelism": 1,
    "scenarios": 64,
    "split": "train",
    "decoding": None,
    "temperature": None,
    "policy_temperature": 1.0,
    "strategy_length": 1,
    "chat_endpoint": None,
    "chat_model": None,
    "chat_key": None,
    "chat_temperature": 0.7,
    "run_id": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    # defaults are None so that only explicit flags override env vars and config files
    g.add_argument("--config", metavar="PATH", help="JSON run configuration")
    g.add_argument("--seed", type=int)
    g.add_argument("--env", choices=registered_envs())
    g.add_argument("--out", metavar="DIR", help="artifact root (default: runs)")
    g.add_argument("--backend", choices=["toy", "chat"])
    g.add_argument("--prm", choices=["oracle", "chat"])
    g.add_argument("--reward-mode", dest="reward_mode", choices=["prm", "terminal"])
    g.add_argument("--no-strategist", dest="no_strategist", action="store_true", default=None)
    g.add_argument("--parallelism", type=int, metavar="N")
    g.add_argument("--run-id", dest="run_id")

    parser = _Parser(prog="epo", description="Strategist training pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rollout", parents=[common], help="collect trajectories")
    p.add_argument("--scenarios", type=int, metavar="N")
    p.add_argument("--split")
    p.add_argument("--policy", metavar="PATH", help="toy policy snapshot (default: uniform)")
    p.add_argument("--decoding", choices=["sample", "greedy"])

    p = sub.add_parser("label", parents=[common], help="label trajectories with a PRM")
    p.add_argument("input", metavar="TRAJECTORIES")

    p = sub.add_parser("train", parents=[common], help="one training iteration from labeled trajectories")
    p.add_argument("input", metavar="TRAJECTORIES", nargs="?")
    p.add_argument("--policy", metavar="PATH")

    p = sub.add_parser("selfplay", parents=[common], help="iterative self-play training")
    p.add_argument("--iterations", type=int)
    p.add_argument("--scenarios", type=int, metavar="N", dest="scenarios_per_iteration")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")

    p = sub.add_parser("eval", parents=[common], help="evaluate strategists")
    p.add_argument("--policy", action="append", default=[], metavar="LABEL=PATH", help="repeatable")
    p.add_argument("--scenarios", type=int, metavar="N")
    p.add_argument("--split")
    p.add_argument("--matrix", action="store_true", help="all side pairings (two-party envs)")
    p.add_argument("--decoding", choices=["sample", "greedy"])
    p.add_argument("--temperature", type=float)

    p = sub.add_parser("inspect", help="pretty-print a trajectory file")
    p.add_argument("input", metavar="TRAJECTORIES")
    p.add_argument("--limit", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------
# settings


def resolve_settings(args: argparse.Namespace, environ: Mapping[str, str]) -> dict[str, Any]:
    """Precedence: flags > environment variables > config file > defaults."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as f:
                file_cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        settings.update(file_cfg)
    for var, key in ENV_VARS.items():
        if environ.get(var):
            settings[key] = environ[var]
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            settings[key] = value
    if settings["reward_mode"] == "terminal":
        settings["reward_mode"] = "terminal_only"
    return settings


def train_config(settings: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig.from_dict({k: v for k, v in settings.items() if k in TRAIN_FIELDS})


def chat_client(settings: Mapping[str, Any]) -> ChatServiceClient:
    if not settings.get("chat_endpoint") or not settings.get("chat_model"):
        raise UsageError("chat backends need EPO_CHAT_ENDPOINT and EPO_CHAT_MODEL (or chat_* config keys)")
    return ChatServiceClient(
        settings["chat_endpoint"],
        settings["chat_model"],
        temperature=float(settings["chat_temperature"]),
        api_key=settings.get("chat_key"),
    )


def make_strategist(settings: Mapping[str, Any], env, policy_path: str | None = None):
    if settings["backend"] == "chat":
        return ChatStrategist(chat_client(settings), load_templates(env.env_id))
    if policy_path:
        return ContextSoftmaxPolicy.load(policy_path)
    return ContextSoftmaxPolicy(env.vocabulary.names, float(settings["policy_temperature"]), int(settings["strategy_length"]))


def make_actor(settings: Mapping[str, Any], env):
    if settings["backend"] == "chat":
        return ChatActor(chat_client(settings), load_templates(env.env_id))
    return ScriptedActor(env.env_id)


def make_prm(settings: Mapping[str, Any]):
    return ChatPRM(chat_client(settings)) if settings["prm"] == "chat" else OraclePRM()


# ---------------------------------------------------------------------------
# run directory and manifest


@dataclass
class Run:
    run_id: str
    root: Path
    config: dict[str, Any]
    artifacts: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "running"
    error: str | None = None

    def path(self, name: str) -> Path:
        p = self.root / name
        self.artifacts[name] = str(p)
        return p

    def write_manifest(self) -> Path:
        present = {k: v for k, v in self.artifacts.items() if Path(v).exists()}
        manifest = {
            "run_id": self.run_id,
            "status": self.status,
            "error": self.error,
            "config": self.config,
            "artifacts": present,
            "timings": self.timings,
        }
        target = self.root / "manifest.json"
        target.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return target


def run_id_for(command: str, settings: Mapping[str, Any]) -> str:
    if settings.get("run_id"):
        return str(settings["run_id"])
    blob = json.dumps({k: v for k, v in settings.items() if k not in ("out", "chat_key")}, sort_keys=True, default=str)
    return f"{command}-{settings['seed']}-{hashlib.sha256(blob.encode()).hexdigest()[:8]}"


# ---------------------------------------------------------------------------
# commands


def cmd_rollout(args, settings, run: Run) -> int:
    env = get_env(settings["env"])
    scenarios = env.scenarios(int(settings["scenarios"]), split=settings["split"], seed=int(settings["seed"]))
    strategist = None if settings["no_strategist"] else make_strategist(settings, env, args.policy)
    instance = EpoInstance(strategist, make_actor(settings, env), load_templates(env.env_id))
    decoding = settings["decoding"] or "sample"
    config = RolloutConfig(seed=int(settings["seed"]), strategist_enabled=not settings["no_strategist"], decoding=decoding)
    result = run_batch(scenarios, [instance, instance], env, config, int(settings["parallelism"]))
    n = write_trajectories(run.path("trajectories.jsonl"), result.trajectories)
    for err in result.errors:
        print(f"episode {err.index} ({err.scenario_id}) failed: {err.message}", file=sys.stderr)
    print(f"wrote {n} trajectories to {run.artifacts['trajectories.jsonl']}")
    return EXIT_OK if not result.errors else EXIT_RUNTIME


def cmd_label(args, settings, run: Run) -> int:
    trajectories = read_trajectories(args.input)
    prm = make_prm(settings)
    labeled, rows, cache = [], [], {}
    for traj in trajectories:
        env = get_env(traj.scenario_id.rsplit("-", 3)[0])
        templates = cache.setdefault(env.env_id, load_templates(env.env_id))
        result = label_trajectory(prm, traj, templates)
        if isinstance(result, LabelFailure):
            rows.append({"trajectory_id": traj.trajectory_id, "failure": result.reason})
            continue
        labeled.append(assign_process_rewards(traj, result))
        rows.append({"trajectory_id": traj.trajectory_id, "indexes": list(result.indexes), "reasoning": result.reasoning})
    with open(run.path("labels.jsonl"), "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    write_trajectories(run.path("trajectories.jsonl"), labeled)
    print(f"labeled {len(labeled)} of {len(trajectories)} trajectories")
    return EXIT_OK


def cmd_train(args, settings, run: Run) -> int:
    if settings["backend"] == "chat":
        raise RuntimeError("chat strategists are trained outside this package")
    env = get_env(settings["env"])
    trajectories = read_trajectories(args.input) if args.input else []
    policy = make_strategist(settings, env, args.policy)
    _, report = train_iteration(policy, trajectories, train_config(settings), env, iteration=1)
    policy.save(run.path("policy.json"))
    with open(run.path("metrics.jsonl"), "w", encoding="utf-8") as f:
        f.write(json.dumps(report.metrics()) + "\n")
    print(f"trained {report.steps} steps; policy {report.version_before} -> {report.version_after}")
    return EXIT_OK


def cmd_selfplay(args, settings, run: Run) -> int:
    if settings["backend"] == "chat":
        raise RuntimeError("chat strategists are trained outside this package")
    env = get_env(settings["env"])
    config = RunConfig(
        env_id=env.env_id,
        train=train_config(settings),
        seed=int(settings["seed"]),
        policy_temperature=float(settings["policy_temperature"]),
        strategy_length=int(settings["strategy_length"]),
        parallelism=int(settings["parallelism"]),
        split=settings["split"],
    )
    policy = make_strategist(settings, env)
    for name in ("trajectories.jsonl", "labels.jsonl", "metrics.jsonl"):
        run.path(name)
    reports = self_play_rl(config, policy, make_actor(settings, env), make_prm(settings), out_dir=run.root)
    policy.save(run.path("policy.json"))
    for r in reports:
        print(f"iteration {r.iteration}: mean_score {r.mean_score:.3f} loss {r.mean_loss:.4f} kept {r.kept} dropped {r.dropped}")
    return EXIT_OK


def cmd_eval(args, settings, run: Run) -> int:
    env = get_env(settings["env"])
    scenarios = env.scenarios(int(settings["scenarios"]), split=settings["split"], seed=int(settings["seed"]))
    policies: dict[str, Any] = {}
    for spec in args.policy:
        label, sep, path = spec.partition("=")
        if not sep:
            label, path = Path(spec).stem, spec
        policies[label] = ContextSoftmaxPolicy.load(path)
    if not policies:
        policies["untrained"] = make_strategist(settings, env)
    if settings["no_strategist"]:
        policies["no-strategist"] = None
    config = EvalConfig(
        seed=int(settings["seed"]),
        decoding=settings["decoding"],
        temperature=settings["temperature"],
        parallelism=int(settings["parallelism"]),
    )
    if args.matrix:
        if not env.two_party:
            raise UsageError(f"--matrix needs a two-party env, not {env.env_id}")
        matrix = config_matrix(policies, env, scenarios, config)
        reports = list(matrix.values())
        run.path("matrix.csv").write_text(matrix_csv(matrix), encoding="utf-8")
    else:
        reports = [evaluate(p, env, scenarios, config, label) for label, p in policies.items()]
    run.path("eval.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")
    table = format_table(reports)
    run.path("eval.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_inspect(args) -> int:
    trajectories = read_trajectories(args.input)
    print(f"{len(trajectories)} trajectories")
    for traj in trajectories[: args.limit]:
        print(
            f"\n{traj.trajectory_id}  participant={traj.participant_id}  score={traj.final_score:g}  "
            f"terminal={traj.terminal}  T={traj.T}  version={traj.policy_version}"
        )
        for turn in traj.turns:
            strategy = turn.strategy.rendered if turn.strategy else "-"
            reward = "" if turn.process_reward is None else f"  r={turn.process_reward:g}"
            print(f"  [{turn.observation.turn_index}] {turn.observation.source.value}: {turn.observation.content}")
            print(f"      strategy: {strategy}{reward}")
            print(f"      behavior: {turn.behavior.content}")
    return EXIT_OK


COMMANDS = {"rollout": cmd_rollout, "label": cmd_label, "train": cmd_train, "selfplay": cmd_selfplay, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None, environ: Mapping[str, str] | None = None) -> int:
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"epo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command == "inspect":
        try:
            return cmd_inspect(args)
        except Exception as exc:
            print(f"epo: error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    try:
        settings = resolve_settings(args, environ)
        unknown = set(settings) - set(DEFAULTS) - TRAIN_FIELDS - {"input", "policy", "matrix", "limit"}
        if unknown:
            raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
    except UsageError as exc:
        print(f"epo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run_id = run_id_for(args.command, settings)
    root = Path(settings["out"]) / f"run-{run_id}"
    root.mkdir(parents=True, exist_ok=True)
    shown = {k: v for k, v in settings.items() if k != "chat_key"}
    run = Run(run_id, root, shown)
    start = time.perf_counter()
    code = EXIT_RUNTIME
    try:
        code = COMMANDS[args.command](args, settings, run)
        run.status = "ok" if code == EXIT_OK else "error"
    except UsageError as exc:
        run.status, run.error, code = "error", str(exc), EXIT_USAGE
        print(f"epo: error: {exc}", file=sys.stderr)
    except Exception as exc:
        run.status, run.error, code = "error", str(exc), EXIT_RUNTIME
        print(f"epo: error: {exc}", file=sys.stderr)
    finally:
        run.timings["total_seconds"] = round(time.perf_counter() - start, 3)
        run.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
