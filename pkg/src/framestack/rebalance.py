"""Batch samplers and pair augmentations for class imbalance.

FrameStack takes two videos from a batch, gives each a frame budget driven
by how well the model currently does on its classes (running AP), uniformly
subsamples each to its budget, concatenates the clips and mixes the labels
with the same ratio. Mixup blends two clips frame by frame instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from framestack.core import DataError

AUG_KINDS = ("none", "framestack", "mixup")
LENGTH_MODES = ("exact_L", "strict_paper")
SAMPLERS = ("random", "cbs")

# floor() tolerance: (1 - 0.9) * 60 evaluates to 5.999999999999998 in binary
_FLOOR_TOL = 1e-9


@dataclass
class AugPolicy:
    kind: str = "none"
    eta: float = 0.5
    clip_len: int = 60
    length_mode: str = "exact_L"
    beta_source: str = "rap"
    eps: float = 1e-5
    mixup_alpha: float = 0.2

    def __post_init__(self):
        if self.kind not in AUG_KINDS:
            raise DataError(f"unknown augmentation {self.kind!r}; choose from {AUG_KINDS}")
        if self.length_mode not in LENGTH_MODES:
            raise DataError(f"unknown length mode {self.length_mode!r}; choose from {LENGTH_MODES}")
        if not 0.0 <= self.eta <= 1.0:
            raise DataError(f"eta must be in [0, 1], got {self.eta}")
        if self.eps <= 0:
            raise DataError(f"eps must be > 0, got {self.eps}")
        if self.clip_len < 2:
            raise DataError(f"clip_len must be >= 2, got {self.clip_len}")
        if self.mixup_alpha <= 0:
            raise DataError(f"mixup_alpha must be > 0, got {self.mixup_alpha}")
        self.constant_beta  # validates beta_source

    @property
    def constant_beta(self) -> float | None:
        """The fixed beta for ``const:<x>`` sources, else None."""
        src = self.beta_source
        if src in ("rap", "freq"):
            return None
        if src.startswith("const:"):
            try:
                beta = float(src.split(":", 1)[1])
            except ValueError:
                pass
            else:
                if 0.0 <= beta <= 1.0:
                    return beta
        raise DataError(f"beta_source must be 'rap', 'freq' or 'const:<b in [0,1]>', got {src!r}")


# ---------------------------------------------------------------- samplers


def random_batch_sampler(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch: a seeded permutation of ``range(n)`` cut into batches (last one partial)."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def class_index(label_sets: Sequence[Sequence[int]], num_classes: int) -> list[np.ndarray]:
    members: list[list[int]] = [[] for _ in range(num_classes)]
    for i, labels in enumerate(label_sets):
        for c in labels:
            members[c].append(i)
    return [np.array(m, dtype=np.int64) for m in members]


def class_balanced_sampler(
    members: Sequence[np.ndarray], n: int, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """One epoch of ``n`` draws: class uniformly, then a video uniformly within it."""
    empty = [c for c, m in enumerate(members) if len(m) == 0]
    if empty:
        raise DataError(f"class-balanced sampling needs every class populated; empty: {empty}")
    classes = rng.integers(len(members), size=n)
    picks = rng.random(n)
    sizes = np.array([len(m) for m in members])
    within = np.minimum((picks * sizes[classes]).astype(np.int64), sizes[classes] - 1)
    order = np.array([members[c][k] for c, k in zip(classes, within)], dtype=np.int64)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# ------------------------------------------------------------- subsampling


def uniform_indices(length: int, m: int) -> np.ndarray:
    """Centre-of-bin indices ``floor((k + 0.5) * length / m)`` for ``k < m``."""
    k = np.arange(m, dtype=np.int64)
    return ((2 * k + 1) * length) // (2 * m) if m > 0 else k


def uniform_subsample(V: np.ndarray, m: int) -> np.ndarray:
    return V[uniform_indices(V.shape[0], m)]


_warned_replacement = False


def random_indices(length: int, m: int, rng: np.random.Generator) -> np.ndarray:
    global _warned_replacement
    if m > length:
        if not _warned_replacement:
            warnings.warn(
                f"asked for {m} frames from a {length}-frame video; sampling with replacement",
                stacklevel=2,
            )
            _warned_replacement = True
        return np.sort(rng.integers(length, size=m))
    return np.sort(rng.choice(length, size=m, replace=False))


def random_subsample(V: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    return V[random_indices(V.shape[0], m, rng)]


def random_subsample_batch(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Independent sorted random ``m``-frame subsets of every row of ``B x L x D``."""
    B, L = X.shape[:2]
    if m > L:
        idx = np.stack([random_indices(L, m, rng) for _ in range(B)])
    else:
        idx = np.sort(np.argsort(rng.random((B, L)), axis=1)[:, :m], axis=1)
    return np.take_along_axis(X, idx[:, :, None], axis=1)


# ---------------------------------------------------------------- FrameStack


def _dominant_share(a: float, b: float) -> float:
    # a / (a + b) for a > b, written as 1 / (1 + b/a) so it is non-decreasing
    # in a and non-increasing in b under IEEE rounding
    return 1.0 / (1.0 + b / a)


def compute_beta(rap_i: float, rap_j: float, eps: float = 1e-5) -> float:
    """Temporal sampling ratio ``rap_i / (rap_i + rap_j)``; 0.5 when both are ~0.

    Evaluated so that ``compute_beta(a, b) + compute_beta(b, a) == 1`` holds
    exactly in floating point.
    """
    if rap_i + rap_j < eps:
        return 0.5
    if rap_i == rap_j:
        return 0.5
    if rap_i > rap_j:
        return _dominant_share(rap_i, rap_j)
    return 1.0 - _dominant_share(rap_j, rap_i)


def split_lengths(beta: float, L: int, length_mode: str = "exact_L") -> tuple[int, int]:
    """Frame budgets ``(floor((1-beta) L), floor(beta L))`` for the two videos.

    ``exact_L`` gives the second video whatever the first leaves so the sum
    is always ``L``; ``strict_paper`` floors both (sum ``L-1`` or ``L``).
    """
    L_i = min(L, max(0, math.floor((1.0 - beta) * L + _FLOOR_TOL)))
    if length_mode == "exact_L":
        return L_i, L - L_i
    if length_mode == "strict_paper":
        L_j = min(L - L_i, max(0, math.floor(beta * L + _FLOOR_TOL)))
        return L_i, L_j
    raise DataError(f"unknown length mode {length_mode!r}")


def video_score(y: np.ndarray, table: np.ndarray) -> float:
    """Mean per-class score (rAP or frequency) over a video's positive classes."""
    pos = y > 0
    if not pos.any():
        return 0.0
    return float(table[pos].mean())


def pair_beta(y_i, y_j, table, policy: AugPolicy) -> float:
    const = policy.constant_beta
    if const is not None:
        return const
    return compute_beta(video_score(y_i, table), video_score(y_j, table), policy.eps)


def framestack_pair(V_i, y_i, V_j, y_j, table, policy: AugPolicy, beta: float | None = None):
    """Concatenate budgeted clips of two videos and mix their labels.

    Returns ``(frames, labels, beta)``; the frames are exact copies of
    parent frames, the first ``L_i`` from ``V_i`` and the rest from ``V_j``.
    """
    if beta is None:
        beta = pair_beta(y_i, y_j, table, policy)
    L_i, L_j = split_lengths(beta, policy.clip_len, policy.length_mode)
    frames = np.concatenate([uniform_subsample(V_i, L_i), uniform_subsample(V_j, L_j)], axis=0)
    labels = (1.0 - beta) * np.asarray(y_i) + beta * np.asarray(y_j)
    return frames, labels, beta


def mixup_pair(V_i, y_i, V_j, y_j, lam: float):
    if V_i.shape != V_j.shape:
        raise DataError(f"mixup needs equal-length clips, got {V_i.shape} and {V_j.shape}")
    frames = lam * V_i + (1.0 - lam) * V_j
    labels = lam * np.asarray(y_i) + (1.0 - lam) * np.asarray(y_j)
    return frames.astype(V_i.dtype, copy=False), labels, lam


@dataclass
class AugmentedBatch:
    """Augmentation output; ``mask`` marks valid frames (only ragged in strict mode)."""

    frames: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None
    slots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    partners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))


def apply_batch_augmentation(
    frames: np.ndarray,
    targets: np.ndarray,
    policy: AugPolicy,
    table: np.ndarray | None,
    pair_rng: np.random.Generator,
    lam_rng: np.random.Generator | None = None,
) -> AugmentedBatch:
    """Replace ``floor(eta * B)`` random slots by pair-augmented samples.

    Every slot is first brought to ``clip_len`` frames by uniform
    subsampling; a chosen slot is then replaced by the pair of its original
    sample and a partner drawn uniformly from the rest of the batch.
    ``ratios`` records beta (FrameStack) or lambda (mixup) per mixed slot.
    """
    B = frames.shape[0]
    L = policy.clip_len
    idx = uniform_indices(frames.shape[1], L)
    out = frames[:, idx]
    tgt = np.array(targets, dtype=np.float64)
    if policy.kind == "none" or policy.eta == 0.0:
        return AugmentedBatch(out, tgt)
    n_mix = math.floor(policy.eta * B + _FLOOR_TOL)
    if B < 2 or n_mix == 0:
        # a lone trailing sample has no partner
        return AugmentedBatch(out, tgt)
    slots = np.sort(pair_rng.choice(B, size=n_mix, replace=False))
    partners = pair_rng.integers(B - 1, size=n_mix)
    partners = partners + (partners >= slots)
    ratios = np.empty(n_mix)
    mask = None
    if policy.kind == "mixup":
        lam_rng = lam_rng if lam_rng is not None else pair_rng
        lams = lam_rng.beta(policy.mixup_alpha, policy.mixup_alpha, size=n_mix)
        new = out.copy()
        for n, (i, j) in enumerate(zip(slots, partners)):
            new[i], tgt[i], ratios[n] = mixup_pair(out[i], targets[i], out[j], targets[j], lams[n])
        return AugmentedBatch(new, tgt, None, slots, partners, ratios)

    if table is None and policy.constant_beta is None:
        raise DataError("framestack with a table-driven beta source needs a table")
    new = out.copy()
    if policy.length_mode == "strict_paper":
        mask = np.ones(out.shape[:2], dtype=bool)
    for n, (i, j) in enumerate(zip(slots, partners)):
        # parents are the raw train-time clips, not the already length-normalised copies
        f, y, beta = framestack_pair(frames[i], targets[i], frames[j], targets[j], table, policy)
        new[i, : f.shape[0]] = f
        if f.shape[0] < L:
            new[i, f.shape[0]:] = 0
            mask[i, f.shape[0]:] = False
        tgt[i] = y
        ratios[n] = beta
    return AugmentedBatch(new, tgt, mask, slots, partners, ratios)


def frequency_table(counts) -> np.ndarray:
    """Per-class score for the class-frequency beta source.

    Feeding normalised frequency where rAP would go makes each video's frame
    budget proportional to the inverse frequency of its class.
    """
    counts = np.asarray(counts, dtype=np.float64)
    return counts / counts.sum()
