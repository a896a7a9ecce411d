"""The command-line pipeline, driven in-process: rollout, label, train, evaluate, inspect."""

# %% Work in a scratch directory
import json
import tempfile
from pathlib import Path

from epo.cli import main

out = Path(tempfile.mkdtemp(prefix="epo-demo-"))
common = ["--env", "negotiation", "--seed", "3", "--out", str(out)]

# %% Collect, label, then train one iteration
main(["rollout", *common, "--scenarios", "32", "--run-id", "collect"])
main(["label", str(out / "run-collect" / "trajectories.jsonl"), *common, "--run-id", "judge"])
main(["train", str(out / "run-judge" / "trajectories.jsonl"), *common, "--run-id", "step"])

# %% Full self-play, then a pairing matrix against the bare actor
main(["selfplay", *common, "--iterations", "4", "--scenarios", "32", "--run-id", "loop"])
main(["eval", *common, "--policy", f"trained={out / 'run-loop' / 'policy.json'}", "--no-strategist",
      "--matrix", "--scenarios", "64", "--run-id", "matrix"])
print((out / "run-matrix" / "matrix.csv").read_text())

# %% Every run leaves a manifest, even a failed one
code = main(["train", *common, "--run-id", "empty"])
manifest = json.loads((out / "run-empty" / "manifest.json").read_text())
print("exit code", code, "| status", manifest["status"], "|", manifest["error"])

# %% Peek at the labeled data
main(["inspect", str(out / "run-judge" / "trajectories.jsonl"), "--limit", "1"])
