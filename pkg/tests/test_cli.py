import csv
import json
import hashlib

import pytest

from counterevasion.cli import COMMANDS, UsageError, main, resolve

SMALL = ["--n-malicious", "60", "--n-benign", "240"]


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", *SMALL, "--seed", 4, "--out", root / "gen") == 0
    assert run("train", "--data", root / "gen/data.csv", "--seed", 4, "--out", root / "train") == 0
    return root


# -- config precedence --------------------------------------------------------------


def test_defaults_apply_without_flags_or_config():
    cfg = resolve("evaluate", {})
    assert (cfg["gamma"], cfg["alpha"], cfg["reps"], cfg["seed"]) == (8, 1, 5, 0)
    assert cfg["out"] == "out" and cfg["n_benign"] is None


@pytest.mark.parametrize(
    "flag, config, want",
    [(None, None, 8), (None, 3, 3), ("5", None, 5), ("5", 3, 5)],
)
def test_flag_beats_config_beats_default(tmp_path, flag, config, want):
    flags = {}
    if config is not None:
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"gamma": config, "out": "from-config"}))
        flags["config"] = str(p)
    if flag is not None:
        flags["gamma"] = flag
    cfg = resolve("evaluate", flags)
    assert cfg["gamma"] == want
    assert cfg["out"] == ("from-config" if config is not None else "out")


def test_config_keys_accept_dashes_and_lists(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"st-a": ["full", "parallel"], "alpha": [1, 2], "f_d": "all"}))
    cfg = resolve("grid", {"config": str(p)})
    assert cfg["st_a"] == ["full", "parallel"] and cfg["alpha"] == [1, 2] and cfg["f_d"] == ["F1", "F2"]


def test_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"gamma": 2, "bogus": 1}))
    with pytest.raises(UsageError, match="bogus"):
        resolve("evaluate", {"config": str(p)})
    p.write_text("{not json")
    with pytest.raises(UsageError):
        resolve("evaluate", {"config": str(p)})
    p.write_text(json.dumps({"command": "train", "config": {}}))
    with pytest.raises(UsageError, match="train"):
        resolve("evaluate", {"config": str(p)})


def test_every_command_has_seed():
    for name, (_, opts) in COMMANDS.items():
        assert "seed" in [o.name for o in opts], name


# -- exit codes ---------------------------------------------------------------------


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("nope") == 1
    assert run("evaluate", "--alpha", "x") == 1
    assert run("evaluate", "--gamma", "-1") == 1
    assert run("attack", "--out", tmp_path) == 1  # --tree and --data are required
    assert run("attack", "--tree", tmp_path / "missing.json", "--data", tmp_path / "missing.csv") == 1
    assert run("grid", "--st-a", "diagonal") == 1
    assert "usage error" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path, workspace):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,label,x\n")
    assert run("train", "--data", bad, "--out", tmp_path / "o") == 2
    tree = tmp_path / "tree.json"
    tree.write_text("{}")
    assert run("attack", "--tree", tree, "--data", workspace / "gen/data.csv", "--out", tmp_path / "o") == 2


# -- commands ------------------------------------------------------------------------


def test_gen_data_and_train_outputs(workspace):
    gen = workspace / "gen"
    assert sorted(p.name for p in gen.iterdir()) == ["data.csv", "generator.json", "manifest.json", "schema.json"]
    rows = (gen / "data.csv").read_text().splitlines()
    assert len(rows) == 301
    report = json.loads((workspace / "train/report.json").read_text())
    assert report["test"]["acc"] > 0.8
    manifest = json.loads((workspace / "train/manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 4
    assert manifest["outputs"] == ["report.json", "tree.json"]
    assert list(manifest["inputs"].values())[0] == hashlib.sha256((gen / "data.csv").read_bytes()).hexdigest()


def test_attack_defend_and_manifest_replay(workspace, tmp_path):
    a = tmp_path / "a"
    assert run(
        "attack", "--tree", workspace / "train/tree.json", "--data", workspace / "gen/data.csv",
        "--f", "F2", "--st", "sequential", "--alpha", "2", "--seed", 9, "--out", a,
    ) == 0
    assert {p.name for p in a.iterdir()} == {"attacked.csv", "outcomes.jsonl", "attack_report.json", "manifest.json"}
    a2 = tmp_path / "a2"
    assert run("attack", "--config", a / "manifest.json", "--out", a2) == 0
    for name in ("attacked.csv", "outcomes.jsonl", "attack_report.json", "manifest.json"):
        assert (a / name).read_bytes() == (a2 / name).read_bytes(), name
    d = tmp_path / "d"
    assert run(
        "defend", "--tree", workspace / "train/tree.json", "--data", workspace / "gen/data.csv",
        "--gamma", "2", "--out", d,
    ) == 0
    ens = json.loads((d / "ensemble.json").read_text())
    assert len(ens["proactive"]) == 2 and ens["provenance"]["gamma"] == 2


def test_evaluate_and_rank_features(tmp_path, capsys):
    assert run("evaluate", *SMALL, "--gamma", "2", "--reps", "2", "--out", tmp_path / "e") == 0
    doc = json.loads((tmp_path / "e/evaluation.json").read_text())
    assert len(doc["per_rep"]) == 2 and "ensemble" in doc["summary"]
    assert "detector" in capsys.readouterr().out
    assert run("rank-features", *SMALL, "--f", "all", "--reps", "1", "--top-k", "3", "--out", tmp_path / "r") == 0
    feats = json.loads((tmp_path / "r/features.json").read_text())
    assert feats["top_k"] == 3 and len(feats["info_gain_rank"]) == 16


def test_grid_36_cells(tmp_path):
    out = tmp_path / "g"
    argv = ["grid", *SMALL, "--st-a", "all", "--st-d", "all", "--f-a", "all", "--f-d", "all",
            "--alpha", "1", "--gamma", "2", "--reps", "1", "--out", out]
    assert run(*argv) == 0
    rows = list(csv.DictReader(open(out / "grid.csv")))
    assert len(rows) == 36
    assert len({r["cell_id"] for r in rows}) == 36
    assert json.loads((out / "manifest.json").read_text())["outputs"] == ["grid.csv", "grid.json"]
    again = tmp_path / "g2"
    assert run("grid", "--config", out / "manifest.json", "--out", again) == 0
    assert (out / "grid.csv").read_bytes() == (again / "grid.csv").read_bytes()
