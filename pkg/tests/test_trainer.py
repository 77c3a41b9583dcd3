import struct

import numpy as np
import pytest

from conftest import tiny_splits
from framestack import trainer as tr
from framestack.checkpoint import load_tensors, save_tensors
from framestack.core import ClassStats, DataError, NumericError, class_counts, validate_manifest
from framestack.datagen import generate_dataset
from framestack.core import read_manifest
from framestack.fseq import write_fseq
from framestack.trainer import FeatureSet, TrainConfig, fit, load_checkpoint

from conftest import tiny_config

FAST = dict(max_epochs=4, batch_size=8, train_frames=12, test_frames=20, hidden=16, lr=1e-3,
            head_min=12, medium_min=8, aug={"kind": "framestack", "clip_len": 10})


def cfg(**kw):
    base = {**FAST, **kw}
    if "aug" in kw and isinstance(kw["aug"], dict):
        base["aug"] = {**FAST["aug"], **kw["aug"]}
    return TrainConfig(**base)


def test_history_byte_identical(tiny_data, tmp_path):
    train, val, test = tiny_data
    a = fit(cfg(), train, val, test, out_dir=tmp_path / "a")
    b = fit(cfg(), train, val, test, out_dir=tmp_path / "b")
    assert (tmp_path / "a/history.tsv").read_bytes() == (tmp_path / "b/history.tsv").read_bytes()
    assert a.history.count("\n") == 5
    assert a.history.splitlines()[0].split("\t") == list(tr.HISTORY_COLUMNS)
    c = fit(cfg(seed=1), train, val, test)
    assert c.history != a.history


@pytest.mark.parametrize("extra", [{}, {"arch": "netvlad", "clusters": 3}, {"sampler": "cbs", "loss": {"kind": "eql"}},
                                   {"aug": {"kind": "mixup"}, "loss": {"kind": "ldam_drw"}}])
def test_resume_matches_unbroken_run(tiny_data, tmp_path, extra):
    train, val, test = tiny_data
    config = cfg(checkpoint_every=2, **extra)
    full = fit(config, train, val, test, out_dir=tmp_path / "full")
    fit(config, train, val, test, out_dir=tmp_path / "half", stop_after=2)
    resumed = fit(config, train, val, test, out_dir=tmp_path / "res", resume=tmp_path / "half/epoch0002.ckpt")
    assert resumed.history == full.history
    assert resumed.reports["last"].to_tsv() == full.reports["last"].to_tsv()
    _, t_full = load_tensors(tmp_path / "full/last.ckpt")
    _, t_res = load_tensors(tmp_path / "res/last.ckpt")
    assert all(np.array_equal(t_full[k], t_res[k]) for k in t_full)


def test_table_frozen_within_epoch(tiny_data):
    train, _, _ = tiny_data
    seen = {}
    state = tr.init_state(cfg(), train)
    counts = class_counts(train.manifest)

    def hook(epoch, b, batch, table):
        seen.setdefault(epoch, []).append((table.copy(), batch.ratios.copy()))

    finalized = [state.rap.copy()]
    for _ in range(3):
        tr.train_epoch(state, train, cfg(), counts, hook)
        finalized.append(state.rap.copy())
    for e, entries in seen.items():
        for table, _ in entries:
            assert np.array_equal(table, finalized[e])
    assert all(np.all(r == 0.5) for _, r in seen[0])
    assert not np.array_equal(finalized[1], finalized[0])


def test_aug_none_is_isolated_from_augmentation_settings(tiny_data):
    train, val, test = tiny_data
    base = fit(cfg(aug={"kind": "none"}), train, val, test).history
    other = fit(cfg(aug={"kind": "none", "eta": 0.9, "beta_source": "freq", "mixup_alpha": 3.0}),
                train, val, test).history
    zero = fit(cfg(aug={"kind": "framestack", "eta": 0.0}), train, val, test).history
    assert base == other == zero


def test_framestack_changes_training(tiny_data):
    train, val, test = tiny_data
    assert fit(cfg(), train, val, test).history != fit(cfg(aug={"kind": "none"}), train, val, test).history


def test_non_finite_loss_diagnostic(tiny_data, monkeypatch):
    train, _, _ = tiny_data
    monkeypatch.setattr(tr, "compute_loss", lambda s, *a, **k: (float("nan"), np.zeros_like(s)))
    with pytest.raises(NumericError, match="epoch 0 batch 0.*loss=bce.*lr=0.001.*videos="):
        fit(cfg(), train)


def test_config_invariants():
    with pytest.raises(DataError, match="clip length"):
        TrainConfig(train_frames=30, aug={"kind": "framestack"})
    for kw in (dict(sampler="sqrt"), dict(rap_mode="x"), dict(head_min=5, medium_min=9), dict(batch_size=0)):
        with pytest.raises(DataError):
            TrainConfig(**kw)


def test_evaluate_pure_and_groups_shared(tiny_data):
    train, val, test = tiny_data
    run = fit(cfg(max_epochs=2), train)
    stats = validate_manifest(train.manifest, cfg().thresholds, check_paths=False)
    a = tr.evaluate(run.state.head, test, stats, cfg(), split="test")
    b = tr.evaluate(run.state.head, test, stats, cfg(), split="test")
    assert a.to_tsv() == b.to_tsv()
    assert a.stats.groups == stats.groups


def test_best_and_last_reports(tiny_data, tmp_path):
    train, val, test = tiny_data
    run = fit(cfg(eval_every=2), train, val, test, out_dir=tmp_path)
    assert set(run.reports) == {"last", "best"}
    assert (tmp_path / "report_best.tsv").exists() and (tmp_path / "report_last.tsv").exists()
    rows = [r.split("\t") for r in run.history.splitlines()[1:]]
    assert rows[0][3] == "" and rows[1][3] != ""


def test_checkpoint_roundtrip_and_errors(tiny_data, tmp_path):
    train, _, _ = tiny_data
    run = fit(cfg(max_epochs=1), train, out_dir=tmp_path)
    state, config, counts = load_checkpoint(tmp_path / "last.ckpt")
    assert config == cfg(max_epochs=1)
    assert all(np.array_equal(state.head.params[k], v) for k, v in run.state.head.params.items())
    assert all(np.array_equal(state.optimizer.m[k], v) for k, v in run.state.optimizer.m.items())
    assert state.optimizer.t == run.state.optimizer.t and state.epoch == 1
    assert np.array_equal(state.rap, run.state.rap)
    assert list(counts) == list(class_counts(train.manifest))

    data = (tmp_path / "last.ckpt").read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(data[:-10])
    with pytest.raises(DataError, match="truncated or corrupted"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(data[:4] + struct.pack("<I", 9) + data[8:])
    with pytest.raises(DataError, match="version 9"):
        load_checkpoint(tmp_path / "ver.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(DataError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_tensor_roundtrip(tmp_path):
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64),
         "c": np.zeros((0, 4))}
    save_tensors(tmp_path / "x", {"k": [1, "v"]}, t)
    meta, back = load_tensors(tmp_path / "x")
    assert meta == {"k": [1, "v"]}
    assert all(back[k].dtype == t[k].dtype and np.array_equal(back[k], t[k]) for k in t)


def test_load_from_disk_and_ragged(tmp_path):
    splits = generate_dataset(tiny_config(), tmp_path)
    train = FeatureSet.load(read_manifest(tmp_path / "train.tsv"))
    assert isinstance(train.features, np.ndarray) and train.features.shape[1:] == (20, 8)
    rec = train.manifest.records[0]
    write_fseq(np.ones((15, 8)), tmp_path / rec.path)
    ragged = FeatureSet.load(read_manifest(tmp_path / "train.tsv"))
    assert isinstance(ragged.features, list) and ragged.features[0].shape == (15, 8)
    run = fit(cfg(max_epochs=1), ragged, None, ragged)
    assert "overall" in run.reports["last"].summary
    write_fseq(np.ones((15, 3)), tmp_path / rec.path)
    with pytest.raises(DataError, match="inconsistent"):
        FeatureSet.load(read_manifest(tmp_path / "train.tsv"))
    assert len(splits["train"]) == len(train)


def test_separable_data_converges():
    train, val, test = tiny_splits(signal_frac=1.0, noise=0.0)
    run = fit(cfg(max_epochs=30, lr=1e-2, aug={"kind": "none"}), train, val, test)
    assert run.reports["last"].summary["overall"] >= 0.99


def test_rap_reset_mode(tiny_data):
    train, _, _ = tiny_data
    state = tr.init_state(cfg(), train)
    state.rap[:] = 0.7
    sub = train.manifest.subset([0, 1, 2, 3])
    only = FeatureSet(sub, train.features[:4], train.labels[:4])
    seen = set(np.flatnonzero(only.labels.any(axis=0)))
    counts = class_counts(train.manifest)
    tr.train_epoch(state, only, cfg(rap_mode="reset", batch_size=4), counts)
    unseen = [c for c in range(4) if c not in seen]
    assert unseen and all(state.rap[c] == 0 for c in unseen)
