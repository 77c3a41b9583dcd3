"""YAML config files and their CLI overrides.

A config file is a YAML mapping with up to two sections::

    data:            # synthetic generator (gen-data)
      counts: {bands: [[5, 200], [25, 40], [20, 8]]}
      counts_are_train: true
      noise: 1.0
    train:           # training (train / compare)
      max_epochs: 30
      aug: framestack
      eta: 0.5
      loss: focal

Every ``train`` key has a CLI flag of the same name (``eta`` -> ``--eta``).
Relative config paths that do not exist are looked up in the directories
listed in ``$FRAMESTACK_CONFIG_PATH``.
"""

from __future__ import annotations

import argparse
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from framestack.core import DataError
from framestack.losses import LOSS_KINDS
from framestack.rebalance import AUG_KINDS, LENGTH_MODES, SAMPLERS
from framestack.trainer import TrainConfig

CONFIG_PATH_ENV = "FRAMESTACK_CONFIG_PATH"


@dataclass(frozen=True)
class Key:
    name: str
    section: str  # "train", "aug" or "loss"
    field: str
    type: type
    help: str
    source: str  # "paper", "assumption" or "plumbing"
    choices: tuple | None = None


def _opt_int(x):
    return None if x in (None, "", "none", "None") else int(x)


KEYS = [
    Key("max_epochs", "train", "max_epochs", int, "training epochs", "paper"),
    Key("batch_size", "train", "batch_size", int, "videos per mini-batch", "paper"),
    Key("train_frames", "train", "train_frames", int, "random frames per video at train time", "paper"),
    Key("test_frames", "train", "test_frames", int, "uniformly sampled frames per video at test time", "paper"),
    Key("seed", "train", "seed", int, "root seed of all training random streams", "plumbing"),
    Key("sampler", "train", "sampler", str, "batch sampler (cbs = class-balanced)", "paper", SAMPLERS),
    Key("arch", "train", "arch", str, "classification head", "paper", ("nonlinear", "netvlad")),
    Key("hidden", "train", "hidden", _opt_int,
        "hidden width (default 512 nonlinear [assumption], 1024 netvlad [paper])", "assumption"),
    Key("clusters", "train", "clusters", int, "NetVLAD clusters", "paper"),
    Key("lr", "train", "lr", float, "initial Adam learning rate", "paper"),
    Key("lr_step", "train", "lr_step", int, "epochs between learning-rate decays", "paper"),
    Key("lr_decay", "train", "lr_decay", float, "learning-rate decay factor", "assumption"),
    Key("eval_every", "train", "eval_every", int, "validate every N epochs (0 = never)", "plumbing"),
    Key("checkpoint_every", "train", "checkpoint_every", int, "checkpoint every N epochs (0 = final only)", "plumbing"),
    Key("rap_mode", "train", "rap_mode", str,
        "running AP of classes unseen in an epoch: carry previous value or reset to 0", "assumption",
        ("carry", "reset")),
    Key("head_min", "train", "head_min", int, "head classes have more training videos than this", "paper"),
    Key("medium_min", "train", "medium_min", int, "medium classes have more training videos than this", "paper"),
    Key("aug", "aug", "kind", str, "pair augmentation", "paper", AUG_KINDS),
    Key("eta", "aug", "eta", float, "fraction of each batch replaced by mixed samples", "paper"),
    Key("clip_len", "aug", "clip_len", int, "frames per FrameStack/mixup sample", "paper"),
    Key("length_mode", "aug", "length_mode", str,
        "exact_L: budgets sum to clip_len; strict_paper: both floored", "assumption", LENGTH_MODES),
    Key("beta_source", "aug", "beta_source", str,
        "what drives the frame split: rap, freq (class frequency) or const:<b>", "paper"),
    Key("rap_eps", "aug", "eps", float, "below this rAP sum the split falls back to 0.5", "paper"),
    Key("mixup_alpha", "aug", "mixup_alpha", float, "Beta(a, a) parameter of mixup", "assumption"),
    Key("loss", "loss", "kind", str, "training loss", "paper", LOSS_KINDS),
    Key("gamma_focal", "loss", "gamma_focal", float, "focal loss exponent", "assumption"),
    Key("beta_cb", "loss", "beta_cb", float, "class-balanced loss effective-number beta", "assumption"),
    Key("ldam_c", "loss", "ldam_c", float, "LDAM margin scale", "assumption"),
    Key("drw_start", "loss", "drw_start", _opt_int, "epoch at which DRW re-weighting starts (default 0.6 x max_epochs)", "assumption"),
    Key("eql_lambda", "loss", "eql_lambda", float, "EQL frequency threshold", "assumption"),
    Key("eql_gamma", "loss", "eql_gamma", float, "EQL suppression probability", "assumption"),
]
KEY_BY_NAME = {k.name: k for k in KEYS}

_DEFAULTS = TrainConfig()


def default_of(key: Key):
    obj = _DEFAULTS if key.section == "train" else getattr(_DEFAULTS, key.section)
    return getattr(obj, key.field)


def find_config(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    if not p.is_absolute():
        for d in os.environ.get(CONFIG_PATH_ENV, "").split(os.pathsep):
            if d and (Path(d) / p).exists():
                return Path(d) / p
    raise DataError(f"config file {path} not found (also searched ${CONFIG_PATH_ENV})")


def load_yaml(path) -> dict:
    p = find_config(path)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise DataError(f"{p}: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError(f"{p}: expected a mapping at top level")
    return doc


def train_config(flat: dict | None = None) -> TrainConfig:
    """Build a :class:`TrainConfig` from flat ``train`` keys."""
    flat = dict(flat or {})
    unknown = sorted(set(flat) - set(KEY_BY_NAME))
    if unknown:
        raise DataError(f"unknown train config keys: {unknown}")
    sections: dict[str, dict] = {"train": {}, "aug": {}, "loss": {}}
    for name, value in flat.items():
        key = KEY_BY_NAME[name]
        if value is not None or key.type is _opt_int:
            try:
                value = key.type(value) if value is not None else None
            except (TypeError, ValueError):
                raise DataError(f"bad value for {name}: {value!r}") from None
        sections[key.section][key.field] = value
    return TrainConfig(aug=sections["aug"], loss=sections["loss"], **sections["train"])


def flatten(config: TrainConfig) -> dict:
    out = {}
    for key in KEYS:
        obj = config if key.section == "train" else getattr(config, key.section)
        out[key.name] = getattr(obj, key.field)
    return out


def add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training overrides (same names as config keys)")
    for key in KEYS:
        default = default_of(key)
        group.add_argument(
            "--" + key.name.replace("_", "-"),
            dest="cfg_" + key.name,
            type=key.type,
            choices=key.choices,
            default=None,
            metavar=key.name.upper() if key.choices is None else None,
            help=f"{key.help} (default {default!r}; {key.source})",
        )


def overrides_from_args(args: argparse.Namespace) -> dict:
    return {k.name: getattr(args, "cfg_" + k.name) for k in KEYS
            if getattr(args, "cfg_" + k.name, None) is not None}
