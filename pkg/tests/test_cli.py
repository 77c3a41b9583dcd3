import subprocess
import sys

import pytest
import yaml

from framestack import cli
from framestack import config as cfgmod
from framestack.core import DataError
from framestack.trainer import TrainConfig

DATA = {"counts": [20, 14, 10, 10], "dim": 8, "length": 20, "signal_frac": 0.6, "noise": 0.5,
        "n_background": 4, "seed": 3, "thresholds": {"head_min": 12, "medium_min": 8}}
TRAIN = {"max_epochs": 3, "batch_size": 8, "train_frames": 12, "test_frames": 20, "hidden": 16,
         "lr": 0.001, "head_min": 12, "medium_min": 8, "clip_len": 10, "aug": "framestack",
         "eval_every": 1}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.yaml").write_text(yaml.safe_dump({"data": DATA, "train": TRAIN}))
    assert cli.main(["gen-data", "--config", str(root / "cfg.yaml"), "--out", str(root / "data")]) == 0
    return root


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_outputs(workspace):
    names = {p.name for p in (workspace / "data").iterdir()}
    assert {"all.tsv", "train.tsv", "val.tsv", "test.tsv", "stats.tsv", "videos"} <= names


@pytest.mark.filterwarnings("ignore:class with 6 videos")
def test_gen_data_flag_overrides(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--counts", "bands:3x6", "--dim", 4, "--length", 5,
                       "--out", tmp_path)
    assert code == 0 and "18 videos" in out
    code, _, err = run(capsys, "gen-data", "--out", tmp_path / "x")
    assert code == 1 and "counts" in err
    code, _, err = run(capsys, "gen-data", "--counts", "3,x", "--out", tmp_path / "x")
    assert code == 1


def test_train_eval_report_inspect(workspace, capsys):
    data, out = workspace / "data", workspace / "run"
    code, stdout, _ = run(capsys, "train", "--config", workspace / "cfg.yaml", "--data", data,
                          "--out", out, "--checkpoint-every", 1)
    assert code == 0 and "test[last]" in stdout
    assert (out / "history.tsv").read_text().count("\n") == 4

    code, stdout, _ = run(capsys, "eval", "--checkpoint", out / "last.ckpt", "--manifest", data / "test.tsv",
                          "--out", workspace / "eval.tsv")
    assert code == 0 and stdout.startswith("class\tcount\tgroup\tap\n")
    assert (workspace / "eval.tsv").read_text() == stdout
    assert stdout == (out / "report_last.tsv").read_text()
    code, best, _ = run(capsys, "eval", "--checkpoint", out / "last.ckpt", "--manifest", data / "test.tsv",
                        "--which", "best")
    assert code == 0 and best == (out / "report_best.tsv").read_text()

    files = [out / "report_last.tsv", out / "history.tsv"]
    code, table, err = run(capsys, "report", "--format", "tsv", *files)
    assert code == 0 and err == ""
    lines = table.splitlines()
    assert lines[0] == "run\toverall\thead\tmedium\ttail\tacc1\tacc5"
    assert len(lines) == 3 and all(len(line.split("\t")) == 7 for line in lines)
    values = [float(line.split("\t")[1]) for line in lines[1:]]
    assert values == sorted(values, reverse=True)
    assert run(capsys, "report", "--format", "tsv", *files)[1] == table
    code, text, _ = run(capsys, "report", *files)
    assert "Overall" in text and "Acc@5" in text

    for target, needle in [(out / "last.ckpt", "arch\tnonlinear"), (data / "train.tsv", "videos\t"),
                           (next((data / "videos").iterdir()), "frames\t20")]:
        code, text, _ = run(capsys, "inspect", target)
        assert code == 0 and needle in text


def test_report_missing_metric(tmp_path, capsys, caplog):
    (tmp_path / "a").mkdir()
    (tmp_path / "a/history.tsv").write_text("epoch\tloss\tlr\tval_overall\tval_head\tval_medium\tval_tail"
                                            "\tval_acc1\tval_acc5\trap_digest\n0\t1.0\t0.1\t0.5\t0.6\t\t0.4\t0.7\t0.8\tab\n")
    (tmp_path / "b").mkdir()
    (tmp_path / "b/history.tsv").write_text("epoch\tloss\tlr\tval_overall\tval_head\tval_medium\tval_tail"
                                            "\tval_acc1\tval_acc5\trap_digest\n0\t1.0\t0.1\t0.6\t0.6\t0.6\t0.6\t0.7\t0.8\tab\n")
    code, out, err = run(capsys, "report", "--format", "tsv", tmp_path / "a/history.tsv", tmp_path / "b/history.tsv")
    assert code == 0
    assert out.splitlines()[1].startswith("b/history\t0.6000")
    assert out.splitlines()[2] == "a/history\t0.5000\t0.6000\t—\t0.4000\t0.7000\t0.8000"
    assert "missing medium" in caplog.text
    res = subprocess.run([sys.executable, "-m", "framestack", "report", str(tmp_path / "a/history.tsv")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "missing medium" in res.stderr and "missing" not in res.stdout


def test_compare_grid(workspace, capsys):
    grid = {"train": TRAIN | {"max_epochs": 1, "eval_every": 0}, "seeds": [0, 1],
            "cells": {"baseline": {"aug": "none"}}, "axes": {"eta": [0.3, 0.7]}}
    (workspace / "grid.yaml").write_text(yaml.safe_dump(grid))
    code, out, _ = run(capsys, "compare", "--grid", workspace / "grid.yaml", "--data", workspace / "data",
                       "--out", workspace / "cmp")
    assert code == 0
    rows = out.splitlines()
    assert rows[0].startswith("cell\tseed\toverall")
    assert [r.split("\t")[:2] for r in rows[1:]] == [
        [c, s] for c in ("baseline", "eta=0.3", "eta=0.7") for s in ("0", "1", "mean")]
    assert (workspace / "cmp/compare.tsv").read_text() == out
    assert (workspace / "cmp/eta=0.3/seed1/history.tsv").exists()


def test_exit_codes(workspace, tmp_path, capsys):
    assert run(capsys, "eval", "--checkpoint", tmp_path / "none.ckpt", "--manifest", "x")[0] == 2
    (tmp_path / "bad.ckpt").write_bytes(b"FSCK" + b"\0" * 40)
    code, out, err = run(capsys, "inspect", tmp_path / "bad.ckpt")
    assert code == 2 and out == "" and err
    code, _, err = run(capsys, "train", "--data", tmp_path, "--out", tmp_path / "o")
    assert code == 2 and "train.tsv" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--bogus-flag"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--data", "d", "--out", "o", "--aug", "cutmix"])
    assert exc.value.code == 1
    (tmp_path / "c.yaml").write_text("train: {etaa: 1}\n")
    code, _, err = run(capsys, "train", "--config", tmp_path / "c.yaml", "--data", workspace / "data",
                       "--out", tmp_path / "o")
    assert code == 2 and "etaa" in err


def test_numeric_failure_exit_code(workspace, tmp_path, capsys, monkeypatch):
    import framestack.trainer as tr
    monkeypatch.setattr(tr, "compute_loss", lambda s, *a, **k: (float("inf"), s * 0))
    code, _, err = run(capsys, "train", "--config", workspace / "cfg.yaml", "--data", workspace / "data",
                       "--out", tmp_path / "o")
    assert code == 3 and "non-finite loss" in err


def test_help_documents_every_flag_with_default_and_source():
    parser = cli.build_parser()
    train = parser._subparsers._group_actions[0].choices["train"]
    text = train.format_help()
    for key in cfgmod.KEYS:
        flag = "--" + key.name.replace("_", "-")
        assert flag in text
    for action in train._actions:
        if action.dest.startswith("cfg_"):
            assert "default" in action.help and any(s in action.help for s in ("paper", "assumption", "plumbing"))


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "framestack", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
    res = subprocess.run([sys.executable, "-m", "framestack", "nonsense"], capture_output=True, text=True)
    assert res.returncode == 1 and res.stdout == ""


def test_config_keys_roundtrip(tmp_path, monkeypatch):
    config = cfgmod.train_config({"eta": 0.3, "loss": "focal", "rap_eps": 1e-4, "drw_start": "none"})
    assert config.aug.eta == 0.3 and config.loss.kind == "focal" and config.aug.eps == 1e-4
    assert cfgmod.train_config(cfgmod.flatten(config)) == config
    assert cfgmod.train_config() == TrainConfig()
    with pytest.raises(DataError, match="bad value"):
        cfgmod.train_config({"eta": "high"})
    (tmp_path / "found.yaml").write_text("train: {eta: 0.1}\n")
    monkeypatch.setenv(cfgmod.CONFIG_PATH_ENV, str(tmp_path))
    assert cfgmod.load_yaml("found.yaml")["train"]["eta"] == 0.1
    with pytest.raises(DataError, match="not found"):
        cfgmod.load_yaml("missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(DataError, match="mapping"):
        cfgmod.load_yaml(tmp_path / "list.yaml")


def test_bundled_configs_parse():
    from pathlib import Path
    root = Path(__file__).parents[1] / "configs"
    for path in root.glob("*.yaml"):
        doc = cfgmod.load_yaml(path)
        base = cfgmod.train_config(doc.get("train"))
        for overrides in cli.grid_cells(doc).values() if ("cells" in doc or "axes" in doc) else [{}]:
            cfgmod.train_config({**cfgmod.flatten(base), **overrides})
