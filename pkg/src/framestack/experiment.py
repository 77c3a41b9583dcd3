"""Desk-scale synthetic long-tail benchmark.

50 classes in three bands of training-set size (5 x 200, 25 x 40, 20 x 8),
64-d features, 150 frames per video of which 40% carry class signal. Every
seed regenerates the data and reseeds training; methods are compared on the
same data per seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from framestack.config import train_config
from framestack.core import GroupThresholds
from framestack.datagen import SynthConfig, banded_counts, split_dataset, synthesize
from framestack.metrics import SUMMARY_KEYS
from framestack.trainer import FeatureSet, fit

log = logging.getLogger(__name__)

BANDS = [(5, 200), (25, 40), (20, 8)]

DATA_DEFAULTS = dict(dim=64, length=150, signal_frac=0.4, noise=1.0, n_background=32)

TRAIN_DEFAULTS = dict(max_epochs=30, batch_size=64, lr=1e-3, head_min=100, medium_min=20,
                      eval_every=0, arch="nonlinear")

# Rebalancing methods compared against the plain baseline
METHODS = {
    "baseline": {},
    "cbs": {"sampler": "cbs"},
    "cb_loss": {"loss": "cb"},
    "ldam_drw": {"loss": "ldam_drw"},
    "eql": {"loss": "eql"},
    "mixup": {"aug": "mixup"},
    "framestack": {"aug": "framestack", "loss": "focal"},
}

ABLATIONS = {
    "framestack_bce": {"aug": "framestack"},
    "framestack_beta0.5": {"aug": "framestack", "loss": "focal", "beta_source": "const:0.5"},
    "framestack_freq": {"aug": "framestack", "loss": "focal", "beta_source": "freq"},
    "focal_only": {"loss": "focal"},
}

ETAS = (0.0, 0.3, 0.5, 0.7, 0.9)


def eta_sweep_methods(loss="focal", zero_is_baseline=True) -> dict[str, dict]:
    """FrameStack runs over ``ETAS``.

    With ``zero_is_baseline`` the eta=0 cell is the plain BCE baseline, which
    is how the reference sweep reports its eta=0 row; otherwise eta=0 keeps
    the sweep's loss and simply mixes nothing.
    """
    cells = {}
    for eta in ETAS:
        if eta == 0 and zero_is_baseline:
            cells["eta=0"] = {}
        else:
            cells[f"eta={eta:g}"] = {"aug": "framestack", "loss": loss, "eta": eta}
    return cells


@dataclass
class SyntheticSplits:
    config: SynthConfig
    train: FeatureSet
    val: FeatureSet
    test: FeatureSet


def synthetic_splits(seed: int, **data_overrides) -> SyntheticSplits:
    params = {**DATA_DEFAULTS, **data_overrides}
    cfg = SynthConfig(
        num_classes=sum(n for n, _ in BANDS), counts=banded_counts(BANDS), seed=seed,
        counts_are_train=True, thresholds=GroupThresholds(100, 20), **params,
    )
    manifest, feats = synthesize(cfg)
    row = {r.video_id: i for i, r in enumerate(manifest.records)}
    parts = [FeatureSet.from_arrays(m, feats[[row[r.video_id] for r in m.records]])
             for m in split_dataset(manifest, cfg.ratios, seed)]
    return SyntheticSplits(cfg, *parts)


def run_methods(methods: dict[str, dict], seeds=(0, 1, 2), train_overrides=None,
                data_overrides=None, splits_cache=None) -> dict[str, list[dict]]:
    """Train every method on every seed; returns per-method lists of test summaries."""
    splits_cache = {} if splits_cache is None else splits_cache
    results: dict[str, list[dict]] = {name: [] for name in methods}
    for seed in seeds:
        if seed not in splits_cache:
            splits_cache[seed] = synthetic_splits(seed, **(data_overrides or {}))
        data = splits_cache[seed]
        for name, overrides in methods.items():
            flat = {**TRAIN_DEFAULTS, **(train_overrides or {}), **overrides, "seed": seed}
            start = time.perf_counter()
            run = fit(train_config(flat), data.train, None, data.test)
            summary = dict(run.reports["last"].summary)
            results[name].append(summary)
            log.info("seed %d %-20s overall %.4f tail %.4f (%.1fs)", seed, name,
                     summary.get("overall", np.nan), summary.get("tail", np.nan),
                     time.perf_counter() - start)
    return results


def mean_summary(runs: list[dict]) -> dict[str, float]:
    return {k: float(np.mean([r[k] for r in runs if k in r])) for k in SUMMARY_KEYS
            if any(k in r for r in runs)}


def format_table(results: dict[str, list[dict]]) -> str:
    header = f"{'method':<22}" + "".join(f"{k:>9}" for k in SUMMARY_KEYS)
    lines = [header]
    for name, runs in results.items():
        m = mean_summary(runs)
        lines.append(f"{name:<22}" + "".join(f"{m[k]:>9.4f}" if k in m else f"{'—':>9}" for k in SUMMARY_KEYS))
    return "\n".join(lines)
