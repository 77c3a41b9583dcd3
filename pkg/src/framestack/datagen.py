"""Synthetic long-tailed frame-feature datasets.

Each class owns a unit-norm prototype; each video is a sequence of frames
where only a fraction ``signal_frac`` of frames show (a noisy copy of) one of
the video's class prototypes and the rest show shared background prototypes.
This mimics weakly labelled video: the label is right, most frames are not
about it.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from framestack import rng as rngs
from framestack.core import (
    ClassStats,
    DataError,
    DatasetManifest,
    GroupThresholds,
    Record,
    class_counts,
    write_class_stats,
    write_manifest,
)
from framestack.fseq import write_fseq

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.7, 0.1, 0.2)


def zipf_counts(num_classes: int, n_max: int, n_min: int = 1, alpha: float = 1.0) -> list[int]:
    if not n_max >= n_min >= 1:
        raise DataError(f"need n_max >= n_min >= 1, got {n_max}, {n_min}")
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    return [max(n_min, math.floor(n_max * r ** (-alpha))) for r in range(1, num_classes + 1)]


def banded_counts(bands: Sequence[tuple[int, int]]) -> list[int]:
    """Expand ``[(num_classes, count), ...]`` into a per-class count list."""
    if not bands:
        raise DataError("banded_counts needs at least one band")
    counts = []
    for n_cls, count in bands:
        if count < 1:
            raise DataError(f"count must be >=1, got {count}")
        if n_cls < 0:
            raise DataError(f"band size must be >= 0, got {n_cls}")
        counts.extend([int(count)] * int(n_cls))
    return counts


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Per-class (train, val, test) sizes; rounding remainder goes to train.

    A split with a nonzero ratio always gets at least one video, taken from
    train; a class too small for that cannot be stratified.
    """
    r_train, r_val, r_test = ratios
    # guard against products like 0.1 * 30 landing a hair below an integer
    n_val = math.floor(n * r_val + 1e-9)
    n_test = math.floor(n * r_test + 1e-9)
    bumped = False
    if r_val > 0 and n_val == 0:
        n_val, bumped = 1, True
    if r_test > 0 and n_test == 0:
        n_test, bumped = 1, True
    n_train = n - n_val - n_test
    if n_train < (1 if r_train > 0 else 0):
        raise DataError(f"cannot stratify a class with {n} video(s) over ratios {tuple(ratios)}")
    if bumped:
        warnings.warn(
            f"class with {n} videos is too small for ratios {tuple(ratios)}; "
            f"using {n_train}/{n_val}/{n_test}",
            stacklevel=2,
        )
    return n_train, n_val, n_test


def total_for_train(n_train: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> int:
    """Smallest class size whose stratified train share is exactly ``n_train``."""
    n = n_train
    while True:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                if split_sizes(n, ratios)[0] == n_train:
                    return n
            except DataError:
                pass
        n += 1
        if n > 10 * n_train + 10:
            raise DataError(f"no class size yields {n_train} training videos at {tuple(ratios)}")


@dataclass
class SynthConfig:
    num_classes: int
    counts: list[int]
    dim: int = 64
    length: int = 150
    signal_frac: float = 0.4
    noise: float = 1.0
    n_background: int = 32
    seed: int = 0
    counts_are_train: bool = False
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    thresholds: GroupThresholds = field(default_factory=GroupThresholds)

    def __post_init__(self):
        self.counts = [int(n) for n in self.counts]
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.num_classes < 3:
            raise DataError(f"need at least 3 classes, got {self.num_classes}")
        if len(self.counts) != self.num_classes:
            raise DataError(f"{len(self.counts)} counts for {self.num_classes} classes")
        if min(self.counts) < 1:
            raise DataError("every class needs at least one video")
        if not 0 <= self.signal_frac <= 1:
            raise DataError(f"signal_frac must be in [0, 1], got {self.signal_frac}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DataError(f"split ratios must sum to 1, got {self.ratios}")

    def total_counts(self) -> list[int]:
        if self.counts_are_train:
            return [total_for_train(n, self.ratios) for n in self.counts]
        return list(self.counts)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        spec = d.pop("counts")
        if isinstance(spec, dict):
            if "zipf" in spec:
                z = spec["zipf"]
                counts = zipf_counts(d["num_classes"], z["n_max"], z.get("n_min", 1), z.get("alpha", 1.0))
            elif "bands" in spec:
                counts = banded_counts([tuple(b) for b in spec["bands"]])
            else:
                raise DataError(f"unknown counts spec {sorted(spec)}")
        else:
            counts = list(spec)
        d.setdefault("num_classes", len(counts))
        if "thresholds" in d:
            d["thresholds"] = GroupThresholds(**d["thresholds"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown data config keys: {sorted(unknown)}")
        return cls(counts=counts, **d)


def make_prototypes(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm class and background prototypes, drawn once per dataset."""
    gen = rngs.stream(config.seed, "prototypes")
    protos = gen.standard_normal((config.num_classes + config.n_background, config.dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos[: config.num_classes], protos[config.num_classes:]


def synth_video(labels, config: SynthConfig, seed, prototypes=None) -> np.ndarray:
    """One ``length x dim`` float32 feature sequence for a video with ``labels``."""
    labels = np.array(sorted(labels), dtype=np.int64)
    if labels.size == 0:
        raise DataError("a synthetic video needs at least one label")
    class_protos, bg_protos = prototypes if prototypes is not None else make_prototypes(config)
    if bg_protos.shape[0] == 0 and config.signal_frac < 1:
        raise DataError("signal_frac < 1 requires n_background >= 1")
    gen = np.random.default_rng(seed)
    L = config.length
    informative = gen.random(L) < config.signal_frac
    which_label = labels[gen.integers(labels.size, size=L)]
    which_bg = gen.integers(max(bg_protos.shape[0], 1), size=L)
    noise = gen.standard_normal((L, config.dim))
    frames = np.empty((L, config.dim))
    frames[informative] = class_protos[which_label[informative]]
    if not informative.all():
        frames[~informative] = bg_protos[which_bg[~informative]]
    frames += config.noise * noise
    return frames.astype(np.float32)


def _records(config: SynthConfig) -> list[Record]:
    records = []
    for c, n in enumerate(config.total_counts()):
        for i in range(n):
            vid = f"c{c:04d}_v{i:05d}"
            records.append(Record(vid, f"videos/{vid}.fseq", frozenset([c])))
    return records


def synthesize(config: SynthConfig) -> tuple[DatasetManifest, np.ndarray]:
    """Generate the whole dataset in memory: (manifest, N x length x dim features)."""
    if config.signal_frac == 0:
        warnings.warn("signal_frac=0: every frame is background", stacklevel=2)
    protos = make_prototypes(config)
    records = _records(config)
    feats = np.empty((len(records), config.length, config.dim), dtype=np.float32)
    for i, r in enumerate(records):
        feats[i] = synth_video(r.labels, config, rngs.video_seed(config.seed, r.video_id), protos)
    return DatasetManifest(tuple(records), config.num_classes), feats


def split_dataset(
    manifest: DatasetManifest, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Per-class stratified train/val/test split.

    Multi-label records are stratified by their smallest class index.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    by_class: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_class.setdefault(min(r.labels), []).append(i)
    gen = rngs.stream(seed, "split")
    parts: list[list[int]] = [[], [], []]
    for c in sorted(by_class):
        idx = np.array(by_class[c])
        gen.shuffle(idx)
        n_train, n_val, _ = split_sizes(len(idx), ratios)
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train:n_train + n_val])
        parts[2].extend(idx[n_train + n_val:])
    return tuple(manifest.subset(sorted(p), split) for p, split in zip(parts, ("train", "val", "test")))


def generate_dataset(config: SynthConfig, out_dir, workers: int = 1) -> dict[str, DatasetManifest]:
    """Write FSEQ files, manifests (all/train/val/test) and a class-stats TSV."""
    out_dir = Path(out_dir)
    (out_dir / "videos").mkdir(parents=True, exist_ok=True)
    if config.signal_frac == 0:
        warnings.warn("signal_frac=0: every frame is background", stacklevel=2)
    protos = make_prototypes(config)
    records = _records(config)

    def work(r: Record):
        seq = synth_video(r.labels, config, rngs.video_seed(config.seed, r.video_id), protos)
        write_fseq(seq, out_dir / r.path)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, records))
    else:
        for r in records:
            work(r)

    full = DatasetManifest(tuple(records), config.num_classes, None, out_dir)
    train, val, test = split_dataset(full, config.ratios, config.seed)
    write_manifest(full, out_dir / "all.tsv")
    for m in (train, val, test):
        write_manifest(m, out_dir / f"{m.split}.tsv")
    stats = ClassStats.from_counts(class_counts(train), config.thresholds)
    write_class_stats(stats, out_dir / "stats.tsv")
    log.info("wrote %d videos to %s", len(records), out_dir)
    return {"all": full, "train": train, "val": val, "test": test}
