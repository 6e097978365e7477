import json

import pytest

from retrieval_nle.cli import main

SMALL = {"n_scenes": 10, "n_train": 16, "n_val": 4, "n_test": 4, "d_model": 16, "n_heads": 2, "d_feat": 32,
         "epochs": 2, "learning_rate": 0.003}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["gen-synthetic", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_train_outputs(workspace):
    assert (workspace / "run" / "model.ckpt.json").exists()
    lines = (workspace / "run" / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss" and len(lines) == 3


def test_build_memory_and_retrieve(workspace, capsys):
    cfg, data = str(workspace / "cfg.json"), str(workspace / "data")
    out = workspace / "mem.jsonl"
    assert main(["build-memory", "--config", cfg, "--data", data, "--phase", "inference", "--out", str(out)]) == 0
    assert json.loads(out.read_text().splitlines()[0]) == {"d_feat": 32, "count": 20}
    capsys.readouterr()
    assert main(["retrieve", "--config", cfg, "--data", data, "--id", "test-00000", "--k", "3"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert len(shown["ranked"]) == 3 and all(not r["id"].startswith("test") for r in shown["ranked"])


def test_generate_evaluate_oracle(workspace, capsys):
    data, ckpt = str(workspace / "data"), str(workspace / "run")
    assert main(["generate", "--data", data, "--checkpoint", ckpt, "--id", "test-00001"]) == 0
    report = workspace / "reports" / "rere.json"
    assert main(["evaluate", "--data", data, "--checkpoint", ckpt, "--out", str(report)]) == 0
    saved = json.loads(report.read_text())
    assert saved["n_total"] == 4 and saved["filtered"]["n"] == saved["n_correct"]
    assert report.with_suffix(".txt").exists()
    assert main(["oracle-test", "--data", data, "--checkpoint", ckpt, "--mode", "oracle_a"]) == 0
    assert "oracle_a" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["evaluate", "--mode", "nearest"],
    ["oracle-test", "--mode", "rere"],
    ["retrieve", "--id", "x", "--data", "/nonexistent"],
])
def test_bad_usage_exits_1(argv):
    assert main(argv) == 1


def test_unknown_sample_and_bad_config(workspace, tmp_path):
    data, ckpt = str(workspace / "data"), str(workspace / "run")
    assert main(["generate", "--data", data, "--checkpoint", ckpt, "--id", "nope"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"epochz": 3}')
    assert main(["gen-synthetic", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "gen-synthetic" in capsys.readouterr().out
