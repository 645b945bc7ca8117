import json
from pathlib import Path

import pytest
from conftest import make_object, table_scene

from sage_forge.cli import build_parser, run_cli
from sage_forge.scene import FLOOR, SupportRelation, validate_scene
from sage_forge.scene_io import load, save

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = ["generate", "augment", "validate", "metrics", "gen-actions", "serve", "replay"]


@pytest.fixture(autouse=True)
def _wide_terminal(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")


@pytest.mark.parametrize("cmd", [None] + COMMANDS)
def test_help_snapshot(cmd, capsys):
    argv = ([cmd] if cmd else []) + ["--help"]
    assert run_cli(argv) == 0
    name = "help" + (f"_{cmd.replace('-', '_')}" if cmd else "") + ".txt"
    assert capsys.readouterr().out == (SNAPSHOTS / name).read_text()


def test_every_command_is_listed():
    sub = build_parser()._subparsers._group_actions[0]
    assert list(sub.choices) == COMMANDS


def test_unknown_flag_is_usage_error(capsys):
    assert run_cli(["--frobnicate"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_bad_level_is_usage_error(tmp_path, capsys):
    save(table_scene(), tmp_path / "s.json")
    assert run_cli(["augment", str(tmp_path / "s.json"), "--out", str(tmp_path / "o"), "--levels", "texture"]) == 2


def test_metrics_on_fixture(tmp_path, capsys):
    path = tmp_path / "s.json"
    save(table_scene(), path)
    assert run_cli(["metrics", str(path)]) == 0
    assert json.loads(capsys.readouterr().out) == {"num_objects": 1, "collision_ratio": 0.0, "stability_ratio": 1.0}


def test_validate_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    save(table_scene(), good)
    assert run_cli(["validate", str(good)]) == 0
    s = table_scene()
    s.objects["ghost"] = make_object("ghost", position=(1, 1, 0))  # no support relation
    bad = tmp_path / "bad.json"
    save(s, bad)
    capsys.readouterr()
    assert run_cli(["validate", str(bad)]) == 1
    assert json.loads(capsys.readouterr().out)["valid"] is False


def test_missing_file_is_runtime_failure(tmp_path, capsys):
    assert run_cli(["metrics", str(tmp_path / "nope.json")]) == 1
    assert "sage-forge:" in capsys.readouterr().err


def test_generate_writes_valid_scene_byte_stably(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}" / "s.json"
        argv = ["generate", "--task", "bedroom with a mug on the nightstand", "--seed", "1", "--out", str(out)]
        assert run_cli(argv) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["stability_ratio"] == 1.0 and summary["collision_ratio"] == 0.0
        assert validate_scene(load(out)) == []
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert run_cli(["replay", str(tmp_path / "run0" / "s.log.jsonl")]) == 0


def test_zero_budget_generate(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert run_cli(["generate", "--task", "a kitchen", "--out", str(out), "--max-iterations", "0"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["reason"] == "BudgetExhausted" and summary["num_objects"] == 0


def test_config_file_supplies_defaults(tmp_path, capsys):
    path = tmp_path / "s.json"
    s = table_scene()
    s.add(make_object("b", (0.5, 0.5, 0.5), (0.5, 0.5, 0.0)), SupportRelation("b", FLOOR))
    save(s, path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": str(path)}))
    assert run_cli(["--config", str(cfg), "metrics", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["num_objects"] == 2
    cfg.write_text("[1, 2]")
    assert run_cli(["--config", str(cfg), "metrics", str(path)]) == 2
