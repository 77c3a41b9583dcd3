"""Classification heads over frame-feature sequences, with analytic gradients.

Both heads take a batch ``X`` of shape ``B x L x D`` and an optional boolean
``mask`` (``B x L``) marking valid frames, and return class scores (logits)
of shape ``B x C``. ``backward`` consumes the cache returned by ``forward``.

Initialisation: weights feeding a rectifier are He-normal
(std ``sqrt(2 / fan_in)``), the last linear layer uses std
``sqrt(1 / fan_in)``, biases start at zero.
"""

from __future__ import annotations

import numpy as np

from framestack import rng as rngs
from framestack.core import NumericError

ARCHS = ("nonlinear", "netvlad")
_NORM_FLOOR = 1e-12


def _check_finite(X):
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite values in model input")


def _weights(gen, fan_in, fan_out, gain, dtype):
    return (gen.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)).astype(dtype)


def _valid_mask(X, mask):
    if mask is None:
        return np.ones(X.shape[:2], dtype=X.dtype)
    return np.asarray(mask, dtype=X.dtype)


class Head:
    arch: str
    params: dict[str, np.ndarray]

    def dims(self) -> dict[str, int]:
        raise NotImplementedError

    def forward(self, X, mask=None):
        raise NotImplementedError

    def backward(self, cache, dscores, wrt_input=False):
        raise NotImplementedError

    def predict(self, X, mask=None, batch_size=256):
        """Scores for ``X`` in chunks of ``batch_size`` rows."""
        out = [self.forward(X[i:i + batch_size], None if mask is None else mask[i:i + batch_size])[0]
               for i in range(0, X.shape[0], batch_size)]
        return np.concatenate(out, axis=0)


class NonlinearHead(Head):
    """Mean-pool over frames, then ``relu(z W1 + b1) W2 + b2``."""

    arch = "nonlinear"

    def __init__(self, dim, num_classes, hidden=512, seed=0, dtype=np.float32, params=None):
        self.dim, self.num_classes, self.hidden = dim, num_classes, hidden
        if params is not None:
            self.params = params
            return
        gen = rngs.stream(seed, "init")
        self.params = {
            "W1": _weights(gen, dim, hidden, 2.0, dtype),
            "b1": np.zeros(hidden, dtype=dtype),
            "W2": _weights(gen, hidden, num_classes, 1.0, dtype),
            "b2": np.zeros(num_classes, dtype=dtype),
        }

    def dims(self):
        return {"dim": self.dim, "num_classes": self.num_classes, "hidden": self.hidden}

    def forward(self, X, mask=None):
        _check_finite(X)
        p = self.params
        if mask is None:
            z = X.mean(axis=1)
            m = None
        else:
            m = _valid_mask(X, mask)
            z = np.einsum("bld,bl->bd", X, m) / m.sum(axis=1, keepdims=True)
        pre = z @ p["W1"] + p["b1"]
        h = np.maximum(pre, 0)
        scores = h @ p["W2"] + p["b2"]
        return scores, (X, m, z, pre, h)

    def backward(self, cache, dscores, wrt_input=False):
        X, m, z, pre, h = cache
        p = self.params
        ds = np.asarray(dscores, dtype=h.dtype)
        grads = {"W2": h.T @ ds, "b2": ds.sum(axis=0)}
        dpre = (ds @ p["W2"].T) * (pre > 0)
        grads["W1"] = z.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        if wrt_input:
            dz = dpre @ p["W1"].T
            if m is None:
                grads["X"] = np.repeat(dz[:, None, :] / X.shape[1], X.shape[1], axis=1)
            else:
                grads["X"] = dz[:, None, :] * (m / m.sum(axis=1, keepdims=True))[:, :, None]
        return grads


def _l2_normalize(x):
    """Row-wise L2 normalisation over the last axis, skipped for ~zero rows."""
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    ok = n > _NORM_FLOOR
    y = np.where(ok, x / np.where(ok, n, 1.0), x)
    return y, n, ok


def _l2_normalize_backward(dy, y, n, ok):
    proj = (y * dy).sum(axis=-1, keepdims=True)
    return np.where(ok, (dy - y * proj) / np.where(ok, n, 1.0), dy)


class NetVladHead(Head):
    """Soft-assignment VLAD pooling, projection + rectifier, linear classifier.

    ``a_k(v) = softmax_k(v w_k + b_k)``; ``vlad_k = sum_t a_k(v_t) (v_t - c_k)``;
    each ``vlad_k`` is L2-normalised, the flattened vector is L2-normalised
    again and fed to ``relu(. Wp + bp) Wc + bc``.
    """

    arch = "netvlad"

    def __init__(self, dim, num_classes, clusters=64, hidden=1024, seed=0, dtype=np.float32,
                 frames=None, params=None):
        self.dim, self.num_classes = dim, num_classes
        self.clusters, self.hidden = clusters, hidden
        if params is not None:
            self.params = params
            return
        gen = rngs.stream(seed, "init")
        if frames is not None and len(frames) > 0:
            frames = np.asarray(frames).reshape(-1, dim)
            pick = gen.choice(frames.shape[0], size=clusters, replace=frames.shape[0] < clusters)
            centers = frames[pick].astype(dtype)
        else:
            centers = (gen.standard_normal((clusters, dim)) / np.sqrt(dim)).astype(dtype)
        self.params = {
            "w": _weights(gen, dim, clusters, 1.0, dtype),
            "b": np.zeros(clusters, dtype=dtype),
            "centers": centers,
            "Wp": _weights(gen, clusters * dim, hidden, 2.0, dtype),
            "bp": np.zeros(hidden, dtype=dtype),
            "Wc": _weights(gen, hidden, num_classes, 1.0, dtype),
            "bc": np.zeros(num_classes, dtype=dtype),
        }

    def dims(self):
        return {"dim": self.dim, "num_classes": self.num_classes,
                "clusters": self.clusters, "hidden": self.hidden}

    def forward(self, X, mask=None):
        _check_finite(X)
        p = self.params
        B = X.shape[0]
        logits = X @ p["w"] + p["b"]
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        soft = e / e.sum(axis=-1, keepdims=True)
        a = soft if mask is None else soft * _valid_mask(X, mask)[:, :, None]
        asum = a.sum(axis=1)
        vlad = np.einsum("blk,bld->bkd", a, X) - asum[:, :, None] * p["centers"][None]
        intra, n1, ok1 = _l2_normalize(vlad)
        flat = intra.reshape(B, -1)
        g, n2, ok2 = _l2_normalize(flat)
        pre = g @ p["Wp"] + p["bp"]
        h = np.maximum(pre, 0)
        scores = h @ p["Wc"] + p["bc"]
        cache = (X, mask, soft, a, asum, intra, n1, ok1, g, n2, ok2, pre, h)
        return scores, cache

    def backward(self, cache, dscores, wrt_input=False):
        X, mask, soft, a, asum, intra, n1, ok1, g, n2, ok2, pre, h = cache
        p = self.params
        B = X.shape[0]
        ds = np.asarray(dscores, dtype=h.dtype)
        grads = {"Wc": h.T @ ds, "bc": ds.sum(axis=0)}
        dpre = (ds @ p["Wc"].T) * (pre > 0)
        grads["Wp"] = g.T @ dpre
        grads["bp"] = dpre.sum(axis=0)
        dg = dpre @ p["Wp"].T
        dflat = _l2_normalize_backward(dg, g, n2, ok2)
        dintra = dflat.reshape(intra.shape)
        dvlad = _l2_normalize_backward(dintra, intra, n1, ok1)
        # vlad_k = sum_t a_tk x_t - (sum_t a_tk) c_k
        grads["centers"] = -np.einsum("bk,bkd->kd", asum, dvlad)
        da = np.einsum("bkd,bld->blk", dvlad, X) - np.einsum("bkd,kd->bk", dvlad, p["centers"])[:, None, :]
        dsoft = da if mask is None else da * _valid_mask(X, mask)[:, :, None]
        dlogits = soft * (dsoft - (soft * dsoft).sum(axis=-1, keepdims=True))
        grads["w"] = np.einsum("bld,blk->dk", X, dlogits)
        grads["b"] = dlogits.sum(axis=(0, 1))
        if wrt_input:
            grads["X"] = np.einsum("blk,bkd->bld", a, dvlad) + dlogits @ p["w"].T
        return grads


def make_head(arch, dim, num_classes, hidden=None, clusters=64, seed=0, dtype=np.float32, frames=None):
    if arch == "nonlinear":
        return NonlinearHead(dim, num_classes, hidden or 512, seed, dtype)
    if arch == "netvlad":
        return NetVladHead(dim, num_classes, clusters, hidden or 1024, seed, dtype, frames)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHS}")


def head_from_params(arch, dims, params) -> Head:
    if arch == "nonlinear":
        return NonlinearHead(dims["dim"], dims["num_classes"], dims["hidden"], params=params)
    if arch == "netvlad":
        return NetVladHead(dims["dim"], dims["num_classes"], dims["clusters"], dims["hidden"], params=params)
    raise ValueError(f"unknown architecture {arch!r}")


class Adam:
    """Adam with bias correction; moments are kept in the parameters' dtype."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, w in params.items():
            g = grads[name].astype(w.dtype, copy=False)
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            w -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(w.dtype, copy=False)


def lr_schedule(epoch: int, base_lr: float = 1e-4, step: int = 30, decay: float = 0.1) -> float:
    """Step decay: ``base_lr * decay ** (epoch // step)``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * decay ** (epoch // step)
