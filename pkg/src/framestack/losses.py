"""Multi-label (one-vs-all) losses and class re-weighting.

Every loss takes raw class scores (logits) and soft targets in [0, 1] and
returns ``(loss, dloss/dscores)``. The loss is the mean over all B x C
elements. CB, LDAM and EQL are modifiers on a shared binary core, so their
neutral settings reduce exactly to plain BCE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from framestack.core import DataError

LOSS_KINDS = ("bce", "focal", "cb", "ldam_drw", "eql")
PROB_CLAMP = 1e-7


@dataclass
class LossConfig:
    kind: str = "bce"
    gamma_focal: float = 2.0
    beta_cb: float = 0.9999
    ldam_c: float = 0.5
    drw_start: int | None = None
    eql_lambda: float = 0.03
    eql_gamma: float = 0.95

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise DataError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")
        if self.gamma_focal < 0:
            raise DataError(f"gamma_focal must be >= 0, got {self.gamma_focal}")
        if not 0 <= self.beta_cb < 1:
            raise DataError(f"beta_cb must be in [0, 1), got {self.beta_cb}")
        if not 0 <= self.eql_gamma <= 1:
            raise DataError(f"eql_gamma must be in [0, 1], got {self.eql_gamma}")

    def drw_epoch(self, max_epochs: int) -> int:
        return int(0.6 * max_epochs) if self.drw_start is None else self.drw_start


def sigmoid(s):
    s = np.asarray(s)
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def binary_loss(scores, targets, gamma=0.0, class_weights=None, mask=None):
    """Weighted (focal) binary cross-entropy and its gradient w.r.t. scores.

    With ``gamma > 0`` each element is
    ``-[y (1-p)^g log p + (1-y) p^g log(1-p)]``; soft targets weight the
    positive and negative terms. ``class_weights`` (length C) and ``mask``
    (B x C) multiply the element losses and gradients.
    """
    s = np.asarray(scores)
    y = np.asarray(targets, dtype=s.dtype)
    n = s.size
    p = sigmoid(s)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    log_p, log_q = np.log(pc), np.log1p(-pc)
    if gamma == 0:
        elem = -(y * log_p + (1.0 - y) * log_q)
        grad = p - y
    else:
        q = 1.0 - pc
        pos_mod, neg_mod = q ** gamma, pc ** gamma
        elem = -(y * pos_mod * log_p + (1.0 - y) * neg_mod * log_q)
        grad = -y * (q * pos_mod - gamma * pc * pos_mod * log_p) - (1.0 - y) * (
            gamma * neg_mod * q * log_q - pc * neg_mod
        )
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=s.dtype)
        elem = elem * w
        grad = grad * w
    if mask is not None:
        elem = elem * mask
        grad = grad * mask
    return float(elem.sum() / n), grad / n


def bce(scores, targets):
    return binary_loss(scores, targets)


def focal(scores, targets, gamma=2.0):
    return binary_loss(scores, targets, gamma=gamma)


def cb_weights(counts, beta: float) -> np.ndarray:
    """Effective-number class weights ``(1-b)/(1-b^n)``, normalised to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise DataError("class-balanced weights need every count >= 1")
    raw = (1.0 - beta) / (1.0 - np.power(beta, counts))
    return raw / raw.mean()


def ldam_margins(counts, scale: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return scale / counts ** 0.25


def ldam_adjust(scores, targets, counts, scale, epoch, drw_start, beta_cb):
    """BCE on scores whose positive entries are lowered by ``scale / n_c^(1/4)``.

    From ``drw_start`` on the elements are also re-weighted with
    :func:`cb_weights` (deferred re-weighting).
    """
    s = np.asarray(scores)
    adjusted = s - ldam_margins(counts, scale).astype(s.dtype) * (np.asarray(targets) > 0)
    weights = cb_weights(counts, beta_cb) if epoch >= drw_start else None
    return binary_loss(adjusted, targets, class_weights=weights)


def eql_mask(targets, counts, lam: float, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Drop (with probability ``gamma``) negative terms of classes rarer than ``lam``."""
    counts = np.asarray(counts, dtype=np.float64)
    freq = counts / counts.sum()
    negative = np.asarray(targets) == 0
    rare = (freq < lam)[None, :]
    suppress = rng.random(negative.shape) < gamma
    return np.where(negative & rare & suppress, 0.0, 1.0)


def compute_loss(scores, targets, config: LossConfig, counts=None, epoch=0, max_epochs=1, rng=None):
    """Dispatch on ``config.kind``; returns ``(loss, dloss/dscores)``."""
    kind = config.kind
    if kind == "bce":
        return bce(scores, targets)
    if kind == "focal":
        return focal(scores, targets, config.gamma_focal)
    if counts is None:
        raise DataError(f"loss {kind!r} needs per-class training counts")
    if kind == "cb":
        return binary_loss(scores, targets, class_weights=cb_weights(counts, config.beta_cb))
    if kind == "ldam_drw":
        return ldam_adjust(
            scores, targets, counts, config.ldam_c, epoch, config.drw_epoch(max_epochs), config.beta_cb
        )
    if kind == "eql":
        if rng is None:
            raise DataError("eql loss needs a random generator")
        mask = eql_mask(targets, counts, config.eql_lambda, config.eql_gamma, rng)
        return binary_loss(scores, targets, mask=mask.astype(np.asarray(scores).dtype))
    raise DataError(f"unknown loss {kind!r}")
