import json
from pathlib import Path

import pytest

from epo.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main, resolve_settings


def _manifest(out: Path) -> dict:
    (path,) = list(out.glob("run-*/manifest.json"))
    return json.loads(path.read_text())


@pytest.mark.parametrize("argv", [["frobnicate"], ["rollout", "--bogus"], ["selfplay", "--env", "nope"], []])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK


def test_train_without_input_exits_two_with_manifest(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path)], environ={})
    assert code == EXIT_RUNTIME
    assert "no trainable data" in capsys.readouterr().err
    m = _manifest(tmp_path)
    assert m["status"] == "error" and "no trainable data" in m["error"]


def test_inspect_empty_file(tmp_path, capsys):
    f = tmp_path / "e.jsonl"
    f.write_text("")
    assert main(["inspect", str(f)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0 trajectories"


def test_inspect_missing_file_exits_two(tmp_path):
    assert main(["inspect", str(tmp_path / "missing.jsonl")]) == EXIT_RUNTIME


def test_pipeline_rollout_label_train_eval(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["rollout", "--env", "shop", "--scenarios", "8", "--out", out, "--run-id", "r"], environ={}) == 0
    traj = tmp_path / "run-r" / "trajectories.jsonl"
    assert len(traj.read_text().splitlines()) == 8
    assert main(["label", str(traj), "--env", "shop", "--out", out, "--run-id", "l"], environ={}) == 0
    labeled = tmp_path / "run-l" / "trajectories.jsonl"
    assert main(["train", str(labeled), "--env", "shop", "--out", out, "--run-id", "t"], environ={}) == 0
    policy = tmp_path / "run-t" / "policy.json"
    assert policy.exists()
    code = main(["eval", "--env", "shop", "--policy", f"trained={policy}", "--no-strategist",
                 "--scenarios", "4", "--out", out, "--run-id", "e"], environ={})
    assert code == 0
    report = json.loads((tmp_path / "run-e" / "eval.json").read_text())
    assert [r["label"] for r in report] == ["trained", "no-strategist"]
    m = json.loads((tmp_path / "run-e" / "manifest.json").read_text())
    assert m["status"] == "ok" and "eval.json" in m["artifacts"]


def test_matrix_needs_two_party_env(tmp_path):
    assert main(["eval", "--env", "shop", "--matrix", "--out", str(tmp_path)], environ={}) == EXIT_USAGE
    assert _manifest(tmp_path)["status"] == "error"


def test_selfplay_metrics_are_byte_identical(tmp_path):
    argv = ["selfplay", "--env", "negotiation", "--seed", "3", "--iterations", "2", "--scenarios", "8"]
    assert main(argv + ["--out", str(tmp_path / "a")], environ={}) == 0
    assert main(argv + ["--out", str(tmp_path / "b")], environ={}) == 0
    (a,) = (tmp_path / "a").glob("run-*/metrics.jsonl")
    (b,) = (tmp_path / "b").glob("run-*/metrics.jsonl")
    assert a.read_bytes() == b.read_bytes() and len(a.read_text().splitlines()) == 2
    assert a.parent.name == b.parent.name


def test_settings_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chat_model": "from-file", "chat_endpoint": "http://file", "seed": 5, "epochs": 2}))
    parser = build_parser()
    args = parser.parse_args(["rollout", "--config", str(cfg)])
    s = resolve_settings(args, {})
    assert (s["chat_model"], s["seed"], s["epochs"]) == ("from-file", 5, 2)
    s = resolve_settings(args, {"EPO_CHAT_MODEL": "from-env"})
    assert s["chat_model"] == "from-env" and s["chat_endpoint"] == "http://file"
    args = parser.parse_args(["rollout", "--config", str(cfg), "--seed", "9"])
    assert resolve_settings(args, {})["seed"] == 9


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sed": 1}))
    assert main(["rollout", "--config", str(cfg), "--out", str(tmp_path)], environ={}) == EXIT_USAGE


def test_chat_backend_without_endpoint(tmp_path, capsys):
    code = main(["rollout", "--backend", "chat", "--out", str(tmp_path)], environ={})
    assert code == EXIT_USAGE and "EPO_CHAT_ENDPOINT" in capsys.readouterr().err
    assert _manifest(tmp_path)["status"] == "error"


def test_key_is_not_written_to_manifest(tmp_path):
    main(["rollout", "--backend", "chat", "--out", str(tmp_path)], environ={"EPO_CHAT_KEY": "sekrit"})
    assert "sekrit" not in next(tmp_path.glob("run-*/manifest.json")).read_text()
