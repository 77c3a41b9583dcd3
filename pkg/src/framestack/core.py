"""Shared domain types: group thresholds, class statistics and manifests.

Manifest files are UTF-8 TSV with a mandatory ``#classes=<C>`` header and an
optional ``#split=<train|val|test>`` header, followed by one line per video::

    video_id <TAB> relative/path.fseq <TAB> 3,17
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Invalid or inconsistent input data (manifests, feature files, configs)."""


class NumericError(RuntimeError):
    """Non-finite values encountered during training or evaluation."""


class ManifestError(DataError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.problems))


class Group(str, Enum):
    HEAD = "head"
    MEDIUM = "medium"
    TAIL = "tail"


GROUPS = (Group.HEAD, Group.MEDIUM, Group.TAIL)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GroupThresholds:
    """Exclusive lower bounds on training-video counts for head and medium."""

    head_min: int = 500
    medium_min: int = 100

    def __post_init__(self):
        if not self.head_min > self.medium_min > 0:
            raise DataError(
                f"thresholds need head_min > medium_min > 0, got {self.head_min}, {self.medium_min}"
            )


def assign_group(count: int, thresholds: GroupThresholds = GroupThresholds()) -> Group:
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    if count > thresholds.head_min:
        return Group.HEAD
    if count > thresholds.medium_min:
        return Group.MEDIUM
    return Group.TAIL


def binarize_labels(y, tau: float = 0.0) -> set[int]:
    """Indices of classes whose weight exceeds ``tau``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    y = np.asarray(y)
    return {int(c) for c in np.flatnonzero(y > tau)}


def dense_labels(labels: Iterable[int], num_classes: int, dtype=np.float32) -> np.ndarray:
    y = np.zeros(num_classes, dtype=dtype)
    y[list(labels)] = 1
    return y


@dataclass(frozen=True)
class Record:
    video_id: str
    path: str
    labels: frozenset[int]


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[Record, ...]
    num_classes: int
    split: str | None = None
    root: Path = field(default=Path("."), compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def label_matrix(self, dtype=np.float32) -> np.ndarray:
        y = np.zeros((len(self.records), self.num_classes), dtype=dtype)
        for i, r in enumerate(self.records):
            y[i, list(r.labels)] = 1
        return y

    def resolve(self, record: Record) -> Path:
        return self.root / record.path

    def subset(self, indices: Iterable[int], split: str | None = None) -> "DatasetManifest":
        return DatasetManifest(
            tuple(self.records[i] for i in indices), self.num_classes, split, self.root
        )


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    groups: tuple[Group, ...]
    thresholds: GroupThresholds = GroupThresholds()

    @classmethod
    def from_counts(cls, counts, thresholds: GroupThresholds = GroupThresholds()) -> "ClassStats":
        counts = np.asarray(counts, dtype=np.int64)
        counts.setflags(write=False)
        return cls(counts, tuple(assign_group(int(n), thresholds) for n in counts), thresholds)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def members(self, group: Group) -> np.ndarray:
        return np.array([c for c, g in enumerate(self.groups) if g == group], dtype=np.int64)


def class_counts(manifest: DatasetManifest) -> np.ndarray:
    counts = np.zeros(manifest.num_classes, dtype=np.int64)
    for r in manifest.records:
        for c in r.labels:
            counts[c] += 1
    return counts


def validate_manifest(
    manifest: DatasetManifest,
    thresholds: GroupThresholds = GroupThresholds(),
    check_paths: bool = True,
) -> ClassStats:
    """Check manifest invariants and return per-class counts and groups.

    Raises:
        ManifestError: listing every violation found, not just the first.
    """
    if not manifest.records:
        raise ManifestError(["no records"])
    problems = []
    seen = set()
    for r in manifest.records:
        if r.video_id in seen:
            problems.append(f"duplicate video_id {r.video_id!r}")
        seen.add(r.video_id)
        if not r.labels:
            problems.append(f"{r.video_id}: empty label set")
        bad = sorted(c for c in r.labels if not 0 <= c < manifest.num_classes)
        if bad:
            problems.append(
                f"{r.video_id}: class index {bad} out of range for {manifest.num_classes} classes"
            )
        if check_paths and not manifest.resolve(r).is_file():
            problems.append(f"{r.video_id}: dangling path {manifest.resolve(r)}")
    if problems:
        raise ManifestError(problems)
    return ClassStats.from_counts(class_counts(manifest), thresholds)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    num_classes = None
    split = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key == "classes":
                    try:
                        num_classes = int(value)
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: bad #classes header {line!r}") from None
                elif key == "split":
                    split = value
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            vid, rel, labels = parts
            try:
                label_set = frozenset(int(x) for x in labels.split(",") if x.strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad class list {labels!r}") from None
            records.append(Record(vid, rel, label_set))
    if num_classes is None:
        raise DataError(f"{path}: missing '#classes=<C>' header")
    if split is not None and split not in SPLITS:
        raise DataError(f"{path}: unknown split {split!r}")
    return DatasetManifest(tuple(records), num_classes, split, path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = [f"#classes={manifest.num_classes}"]
    if manifest.split:
        lines.append(f"#split={manifest.split}")
    for r in manifest.records:
        labels = ",".join(str(c) for c in sorted(r.labels))
        lines.append(f"{r.video_id}\t{r.path}\t{labels}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_class_stats(stats: ClassStats, path) -> None:
    lines = ["class\tcount\tgroup"]
    for c, (n, g) in enumerate(zip(stats.counts, stats.groups)):
        lines.append(f"{c}\t{int(n)}\t{g.value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
