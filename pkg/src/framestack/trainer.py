"""The training loop: sample, augment, forward, loss, backward, Adam, running AP."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from framestack import rng as rngs
from framestack.checkpoint import load_tensors, save_tensors
from framestack.core import (
    ClassStats,
    DataError,
    DatasetManifest,
    GroupThresholds,
    NumericError,
    class_counts,
)
from framestack.fseq import read_fseq
from framestack.losses import LossConfig, compute_loss
from framestack.metrics import SUMMARY_KEYS, EpochBuffer, MetricsReport, build_report, rap_finalize_epoch
from framestack.model import Adam, Head, head_from_params, lr_schedule, make_head
from framestack.rebalance import (
    SAMPLERS,
    AugPolicy,
    apply_batch_augmentation,
    class_balanced_sampler,
    class_index,
    frequency_table,
    random_batch_sampler,
    random_subsample_batch,
    uniform_indices,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "loss", "lr") + tuple(f"val_{k}" for k in SUMMARY_KEYS) + ("rap_digest",)


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 128
    train_frames: int = 60
    test_frames: int = 150
    seed: int = 0
    sampler: str = "random"
    arch: str = "nonlinear"
    hidden: int | None = None
    clusters: int = 64
    lr: float = 1e-4
    lr_step: int = 30
    lr_decay: float = 0.1
    eval_every: int = 1
    checkpoint_every: int = 0
    rap_mode: str = "carry"
    head_min: int = 500
    medium_min: int = 100
    aug: AugPolicy = field(default_factory=AugPolicy)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.aug, dict):
            self.aug = AugPolicy(**self.aug)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.sampler not in SAMPLERS:
            raise DataError(f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")
        if self.rap_mode not in ("carry", "reset"):
            raise DataError(f"rap_mode must be 'carry' or 'reset', got {self.rap_mode!r}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.aug.kind != "none" and self.batch_size < 2:
            raise DataError(f"{self.aug.kind} pairs samples within a batch; batch_size must be >= 2")
        if self.train_frames < self.aug.clip_len:
            raise DataError(
                f"train_frames ({self.train_frames}) must be >= clip length ({self.aug.clip_len})"
            )
        self.thresholds  # validates

    @property
    def thresholds(self) -> GroupThresholds:
        return GroupThresholds(self.head_min, self.medium_min)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class FeatureSet:
    """In-memory split: features (N x L x D, or a list of L_i x D) and dense labels."""

    manifest: DatasetManifest
    features: np.ndarray | list
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features[0].shape[-1]

    def take(self, idx) -> np.ndarray | list:
        if isinstance(self.features, np.ndarray):
            return self.features[idx]
        return [self.features[i] for i in idx]

    @classmethod
    def from_arrays(cls, manifest: DatasetManifest, features) -> "FeatureSet":
        return cls(manifest, features, manifest.label_matrix())

    @classmethod
    def load(cls, manifest: DatasetManifest) -> "FeatureSet":
        seqs = [read_fseq(manifest.resolve(r)) for r in manifest.records]
        dims = {s.shape[1] for s in seqs}
        if len(dims) > 1:
            raise DataError(f"inconsistent feature dimensions in manifest: {sorted(dims)}")
        if len({s.shape[0] for s in seqs}) == 1:
            feats = np.stack(seqs)
        else:
            feats = seqs
        return cls.from_arrays(manifest, feats)


def _subsample_train(frames, m, gen) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return random_subsample_batch(frames, m, gen)
    return np.stack([random_subsample_batch(f[None], m, gen)[0] for f in frames])


def _subsample_test(frames, m) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames[:, uniform_indices(frames.shape[1], m)]
    return np.stack([f[uniform_indices(f.shape[0], m)] for f in frames])


@dataclass
class TrainState:
    head: Head
    optimizer: Adam
    rap: np.ndarray
    epoch: int = 0
    best_score: float = -np.inf
    best_params: dict | None = None
    history: list = field(default_factory=list)
    best_epoch: int | None = None


def init_state(config: TrainConfig, train: FeatureSet) -> TrainState:
    frames = None
    if config.arch == "netvlad":
        gen = rngs.stream(config.seed, "init-centers")
        pick = gen.choice(len(train), size=min(len(train), config.clusters), replace=False)
        frames = np.concatenate([np.asarray(train.take([i])[0]) for i in pick])
    head = make_head(config.arch, train.dim, train.labels.shape[1], config.hidden, config.clusters,
                     config.seed, np.float32, frames)
    return TrainState(head, Adam(lr=config.lr), np.zeros(train.labels.shape[1]))


def epoch_table(state: TrainState, config: TrainConfig, counts) -> np.ndarray | None:
    """Per-class scores that drive beta for this epoch (a frozen copy)."""
    if config.aug.kind != "framestack":
        return None
    if config.aug.beta_source == "freq":
        return frequency_table(counts)
    return state.rap.copy()


Hook = Callable[[int, int, object, np.ndarray | None], None]


def train_epoch(state: TrainState, train: FeatureSet, config: TrainConfig, counts,
                hook: Hook | None = None) -> float:
    """Run one epoch in place and swap in the new running-AP table; returns mean loss."""
    e = state.epoch
    seed = config.seed
    sample_rng = rngs.stream(seed, "sampling", e)
    frame_rng = rngs.stream(seed, "frames", e)
    pair_rng = rngs.stream(seed, "pairing", e)
    lam_rng = rngs.stream(seed, "mixup", e)
    eql_rng = rngs.stream(seed, "eql", e)

    n = len(train)
    if config.sampler == "cbs":
        members = class_index([r.labels for r in train.manifest.records], train.labels.shape[1])
        batches = class_balanced_sampler(members, n, config.batch_size, sample_rng)
    else:
        batches = random_batch_sampler(n, config.batch_size, sample_rng)

    table = epoch_table(state, config, counts)
    lr = lr_schedule(e, config.lr, config.lr_step, config.lr_decay)
    buffer = EpochBuffer(train.labels.shape[1])
    params = state.head.params
    total = 0.0
    for b, idx in enumerate(batches):
        X = _subsample_train(train.take(idx), config.train_frames, frame_rng)
        batch = apply_batch_augmentation(X, train.labels[idx], config.aug, table, pair_rng, lam_rng)
        if hook is not None:
            hook(e, b, batch, table)
        scores, cache = state.head.forward(batch.frames, batch.mask)
        loss, dscores = compute_loss(scores, batch.targets, config.loss, counts, e,
                                     config.max_epochs, eql_rng)
        if not np.isfinite(loss) or not np.all(np.isfinite(dscores)):
            ids = [train.manifest.records[i].video_id for i in idx[:8]]
            raise NumericError(
                f"non-finite loss at epoch {e} batch {b} (loss={config.loss.kind}, lr={lr:g}, "
                f"videos={ids}{'...' if len(idx) > 8 else ''})"
            )
        grads = state.head.backward(cache, dscores)
        state.optimizer.step(params, grads, lr)
        buffer.record(scores, batch.targets)
        total += loss * len(idx)
    state.rap = rap_finalize_epoch(buffer, state.rap, carry=config.rap_mode == "carry")
    state.epoch += 1
    return total / n


def evaluate(head: Head, data: FeatureSet, stats: ClassStats, config: TrainConfig,
             epoch=None, split=None) -> MetricsReport:
    if len(data) == 0:
        raise DataError("cannot evaluate an empty split")
    chunks = []
    for i in range(0, len(data), 256):
        X = _subsample_test(data.take(range(i, min(i + 256, len(data)))), config.test_frames)
        chunks.append(head.forward(X)[0])
    scores = np.concatenate(chunks).astype(np.float64)
    return build_report(scores, data.labels, stats, epoch, split or data.manifest.split)


def rap_digest(rap: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(rap, dtype="<f8").tobytes()).hexdigest()[:16]


def _fmt(x, spec=".6f"):
    return "" if x is None else format(x, spec)


def history_row(epoch, loss, lr, report: MetricsReport | None, rap) -> str:
    summary = report.summary if report is not None else {}
    cells = [str(epoch), _fmt(loss, ".8f"), _fmt(lr, ".6g")]
    cells += [_fmt(summary.get(k)) for k in SUMMARY_KEYS]
    cells.append(rap_digest(rap))
    return "\t".join(cells)


def history_tsv(rows) -> str:
    return "\t".join(HISTORY_COLUMNS) + "\n" + "".join(r + "\n" for r in rows)


def save_checkpoint(state: TrainState, path, config: TrainConfig, counts) -> None:
    tensors = {f"param/{k}": v for k, v in state.head.params.items()}
    tensors.update({f"adam_m/{k}": v for k, v in state.optimizer.m.items()})
    tensors.update({f"adam_v/{k}": v for k, v in state.optimizer.v.items()})
    tensors["rap"] = np.asarray(state.rap, dtype=np.float64)
    tensors["counts"] = np.asarray(counts, dtype=np.int64)
    if state.best_params is not None:
        tensors.update({f"best/{k}": v for k, v in state.best_params.items()})
    opt = state.optimizer
    meta = {
        "arch": state.head.arch,
        "dims": state.head.dims(),
        "epoch": state.epoch,
        "adam": {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "best_score": None if not np.isfinite(state.best_score) else state.best_score,
        "best_epoch": state.best_epoch,
        "history": state.history,
        "config": config.to_dict(),
    }
    save_tensors(path, meta, tensors)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig, np.ndarray]:
    meta, tensors = load_tensors(path)
    group = lambda prefix: {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    head = head_from_params(meta["arch"], meta["dims"], group("param/"))
    a = meta["adam"]
    opt = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
    opt.t, opt.m, opt.v = a["t"], group("adam_m/"), group("adam_v/")
    best = group("best/") or None
    state = TrainState(head, opt, tensors["rap"], meta["epoch"],
                       -np.inf if meta["best_score"] is None else meta["best_score"], best,
                       list(meta["history"]), meta["best_epoch"])
    return state, TrainConfig(**meta["config"]), tensors["counts"]


@dataclass
class RunResult:
    state: TrainState
    history: str
    reports: dict[str, MetricsReport]


def fit(config: TrainConfig, train: FeatureSet, val: FeatureSet | None = None,
        test: FeatureSet | None = None, out_dir=None, resume=None, stop_after: int | None = None,
        hook: Hook | None = None) -> RunResult:
    """Train for ``config.max_epochs`` epochs with periodic validation.

    The best-validation parameters (by overall mAP) are kept alongside the
    last ones; when ``test`` is given both are evaluated and reported as
    ``last`` and ``best``. ``stop_after`` ends the run early at that epoch
    count (used to produce mid-run checkpoints).
    """
    counts = class_counts(train.manifest)
    stats = ClassStats.from_counts(counts, config.thresholds)
    if resume is not None:
        state, _, _ = load_checkpoint(resume)
    else:
        state = init_state(config, train)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = config.max_epochs if stop_after is None else min(stop_after, config.max_epochs)

    while state.epoch < end:
        e = state.epoch
        lr = lr_schedule(e, config.lr, config.lr_step, config.lr_decay)
        loss = train_epoch(state, train, config, counts, hook)
        report = None
        if val is not None and config.eval_every > 0 and (e + 1) % config.eval_every == 0:
            report = evaluate(state.head, val, stats, config, epoch=e, split="val")
            score = report.summary.get("overall", -np.inf)
            if score > state.best_score:
                state.best_score = score
                state.best_params = copy.deepcopy(state.head.params)
                state.best_epoch = e
        state.history.append(history_row(e, loss, lr, report, state.rap))
        log.info("epoch %d loss %.5f%s", e, loss,
                 "" if report is None else f" val mAP {report.summary.get('overall', float('nan')):.4f}")
        if out is not None:
            (out / "history.tsv").write_text(history_tsv(state.history), encoding="utf-8")
            if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                save_checkpoint(state, out / f"epoch{state.epoch:04d}.ckpt", config, counts)

    reports = {}
    if test is not None:
        reports["last"] = evaluate(state.head, test, stats, config, epoch=state.epoch - 1, split="test")
        if state.best_params is not None:
            best = head_from_params(state.head.arch, state.head.dims(), state.best_params)
            reports["best"] = evaluate(best, test, stats, config, epoch=state.best_epoch, split="test")
    if out is not None:
        save_checkpoint(state, out / "last.ckpt", config, counts)
        (out / "history.tsv").write_text(history_tsv(state.history), encoding="utf-8")
        for name, rep in reports.items():
            rep.write(out / f"report_{name}.tsv")
    return RunResult(state, history_tsv(state.history), reports)
