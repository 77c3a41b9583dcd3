"""Average precision, group-wise mAP, Acc@k and the running-AP tracker."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from framestack.core import GROUPS, ClassStats, DataError

log = logging.getLogger(__name__)

SUMMARY_KEYS = ("overall", "head", "medium", "tail", "acc1", "acc5")


def average_precision(scores, relevance) -> float | None:
    """Non-interpolated AP; ``None`` when there are no positives.

    Items are ranked by descending score, ties broken by ascending index.
    AP is the mean, over positives, of the precision at each positive's rank.
    """
    scores = np.asarray(scores)
    relevance = np.asarray(relevance) > 0
    n_pos = int(relevance.sum())
    if n_pos == 0:
        return None
    order = np.lexsort((np.arange(scores.size), -scores.astype(np.float64)))
    hits = relevance[order]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, n_pos + 1) / ranks
    return math.fsum(precisions.tolist()) / n_pos


def per_class_ap(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """AP per column; NaN where a class has no positives."""
    out = np.full(scores.shape[1], np.nan)
    for c in range(scores.shape[1]):
        ap = average_precision(scores[:, c], labels[:, c])
        if ap is not None:
            out[c] = ap
    return out


def map_by_group(ap: np.ndarray, stats: ClassStats) -> dict[str, float]:
    """Unweighted mean AP overall and per group; groups with no evaluable class are omitted."""
    ap = np.asarray(ap, dtype=np.float64)
    result = {}
    valid = ~np.isnan(ap)
    if valid.any():
        result["overall"] = float(ap[valid].mean())
    for g in GROUPS:
        members = stats.members(g)
        vals = ap[members][valid[members]] if members.size else np.zeros(0)
        if vals.size == 0:
            log.warning("no evaluable class in group %s; omitted", g.value)
            continue
        result[g.value] = float(vals.mean())
    return result


def acc_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of samples whose top-``k`` classes hit any positive label."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores)
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(np.asarray(labels) > 0, order, axis=1).any(axis=1)
    return float(hits.mean())


@dataclass
class MetricsReport:
    ap: np.ndarray
    summary: dict[str, float]
    stats: ClassStats
    epoch: int | None = None
    split: str | None = None

    def to_tsv(self) -> str:
        lines = ["class\tcount\tgroup\tap"]
        for c, (n, g) in enumerate(zip(self.stats.counts, self.stats.groups)):
            ap = "" if np.isnan(self.ap[c]) else f"{self.ap[c]:.6f}"
            lines.append(f"{c}\t{int(n)}\t{g.value}\t{ap}")
        lines.append("")
        lines.append(f"# split={self.split or ''}\tepoch={'' if self.epoch is None else self.epoch}")
        for key in SUMMARY_KEYS:
            val = self.summary.get(key)
            lines.append(f"# {key}\t{'' if val is None else f'{val:.6f}'}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")


def read_report_summary(path) -> dict[str, float]:
    """Parse the summary block of a report written by :meth:`MetricsReport.write`."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# ") and "\t" in line:
            key, _, val = line[2:].partition("\t")
            if key in SUMMARY_KEYS and val:
                out[key] = float(val)
    return out


def build_report(scores, labels, stats: ClassStats, epoch=None, split=None) -> MetricsReport:
    ap = per_class_ap(scores, labels)
    summary = map_by_group(ap, stats)
    summary["acc1"] = acc_at_k(scores, labels, 1)
    summary["acc5"] = acc_at_k(scores, labels, 5)
    return MetricsReport(ap, summary, stats, epoch, split)


@dataclass
class EpochBuffer:
    """Training predictions of the current epoch, for the running AP."""

    num_classes: int
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def __len__(self) -> int:
        return sum(s.shape[0] for s in self.scores)

    def record(self, scores: np.ndarray, targets: np.ndarray) -> None:
        # mixed targets count every parent class with nonzero weight as positive
        self.scores.append(np.array(scores, dtype=np.float64))
        self.labels.append(np.asarray(targets) > 0)

    def clear(self) -> None:
        self.scores.clear()
        self.labels.clear()


def rap_finalize_epoch(buffer: EpochBuffer, previous: np.ndarray, carry: bool = True) -> np.ndarray:
    """Per-class AP over the epoch's recorded predictions; clears the buffer.

    Classes with no recorded positive keep their previous value when
    ``carry`` is set, otherwise they drop to zero.
    """
    if not buffer.scores:
        raise DataError("cannot finalize running AP from an empty buffer")
    ap = per_class_ap(np.concatenate(buffer.scores), np.concatenate(buffer.labels))
    fallback = np.asarray(previous, dtype=np.float64) if carry else np.zeros(buffer.num_classes)
    table = np.where(np.isnan(ap), fallback, ap)
    buffer.clear()
    return table
