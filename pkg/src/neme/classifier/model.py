"""Recurrent behaviour classifier: projection -> stacked LSTM -> readout.

Everything runs in float64 numpy.  Parameters live in a flat ``dict`` of named
arrays so that the optimizer, gradient checks and checkpoint code can treat
them uniformly::

    proj.W   (h, D)     proj.b   (h,)
    lstm{l}.W (4h, h)   lstm{l}.U (4h, h)   lstm{l}.b (4h,)   gate order i, f, g, o
    out.W    (K, h)     out.b    (K,)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import NUM_CLASSES

LOSS_PROB_FLOOR = 1e-12
_MAX_LOSS = -np.log(LOSS_PROB_FLOOR)


class NumericalError(FloatingPointError):
    """Non-finite values in a forward or backward pass."""


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64).copy()
        std[~(std > 0)] = 1.0
        self.std = std

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        """Per-channel z-score statistics over all frames of ``X`` (N, L, D)."""
        flat = X.reshape(-1, X.shape[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))


def standardize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} channels, stats have {stats.mean.shape[0]}")
    return (x - stats.mean) / stats.std


def destandardize(z: np.ndarray, stats: NormStats) -> np.ndarray:
    return z * stats.std + stats.mean


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, label: int) -> float:
    """``-log probs[label]`` with the probability floored at 1e-12."""
    return float(-np.log(max(float(np.asarray(probs)[label]), LOSS_PROB_FLOOR)))


def cross_entropy_from_logits(logits, label: int) -> float:
    return float(min(-log_softmax(np.asarray(logits, dtype=np.float64))[label], _MAX_LOSS))


def param_shapes(D: int, h: int, layers: int, K: int = NUM_CLASSES) -> dict[str, tuple[int, ...]]:
    shapes = {"proj.W": (h, D), "proj.b": (h,)}
    for l in range(layers):
        shapes[f"lstm{l}.W"] = (4 * h, h)
        shapes[f"lstm{l}.U"] = (4 * h, h)
        shapes[f"lstm{l}.b"] = (4 * h,)
    shapes["out.W"] = (K, h)
    shapes["out.b"] = (K,)
    return shapes


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


@dataclass
class EvaluatorModel:
    D: int
    h: int
    layers: int
    K: int = NUM_CLASSES
    params: dict[str, np.ndarray] = field(default_factory=dict)
    norm_stats: NormStats | None = None
    L: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.norm_stats is None:
            self.norm_stats = NormStats.identity(self.D)
        expected = param_shapes(self.D, self.h, self.layers, self.K)
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in expected.items()}
        if set(self.params) != set(expected):
            raise ValueError(f"parameter blocks {sorted(self.params)} do not match {sorted(expected)}")
        for k, s in expected.items():
            a = np.asarray(self.params[k], dtype=np.float64)
            if a.shape != s:
                raise ValueError(f"{k}: shape {a.shape}, expected {s}")
            if not np.all(np.isfinite(a)):
                raise NumericalError(f"{k}: non-finite parameters")
            self.params[k] = a

    @classmethod
    def init(cls, D: int, h: int, layers: int, K: int = NUM_CLASSES, seed: int = 0, **kw) -> "EvaluatorModel":
        """Glorot-uniform weights, zero biases except forget gates at 1."""
        rng = np.random.default_rng(seed)
        p = {"proj.W": _glorot(rng, D, h, (h, D)), "proj.b": np.zeros(h)}
        for l in range(layers):
            p[f"lstm{l}.W"] = np.concatenate([_glorot(rng, h, h, (h, h)) for _ in range(4)])
            p[f"lstm{l}.U"] = np.concatenate([_glorot(rng, h, h, (h, h)) for _ in range(4)])
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0
            p[f"lstm{l}.b"] = b
        p["out.W"] = _glorot(rng, h, K, (K, h))
        p["out.b"] = np.zeros(K)
        return cls(D=D, h=h, layers=layers, K=K, params=p, **kw)

    def copy(self) -> "EvaluatorModel":
        return EvaluatorModel(
            D=self.D, h=self.h, layers=self.layers, K=self.K,
            params={k: v.copy() for k, v in self.params.items()},
            norm_stats=NormStats(self.norm_stats.mean.copy(), self.norm_stats.std.copy()),
            L=self.L, meta=dict(self.meta),
        )

    def predict_proba(self, X_raw: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Class probabilities for raw (unstandardized) windows (N, L, D)."""
        X = standardize(X_raw, self.norm_stats)
        out = [softmax(forward_batch(self, X[i : i + batch_size])[0]) for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.K))

    def predict(self, X_raw: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return self.predict_proba(X_raw, batch_size).argmax(axis=1)


# ---------------------------------------------------------------- forward pass


def _check_input(model: EvaluatorModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != model.D:
        raise ValueError(f"expected windows of shape (N, L, {model.D}), got {X.shape}")
    if X.shape[1] < 1:
        raise ValueError("windows must have at least one frame")
    return X


def forward_batch(model: EvaluatorModel, X: np.ndarray, keep_cache: bool = False):
    """Logits (N, K) for standardized windows X (N, L, D).

    With ``keep_cache`` also returns the activations needed by :func:`backward`.
    """
    X = _check_input(model, X)
    p = model.params
    N, L, _ = X.shape
    h = model.h
    seq = X @ p["proj.W"].T + p["proj.b"]
    caches = []
    for l in range(model.layers):
        W, U, b = p[f"lstm{l}.W"], p[f"lstm{l}.U"], p[f"lstm{l}.b"]
        xw = seq @ W.T + b
        H = np.zeros((N, L + 1, h))
        C = np.zeros((N, L + 1, h))
        gates = np.empty((N, L, 4 * h))
        tanhC = np.empty((N, L, h))
        for t in range(L):
            z = xw[:, t] + H[:, t] @ U.T
            ifo = sigmoid(np.concatenate([z[:, : 2 * h], z[:, 3 * h :]], axis=1))
            i, f, o = ifo[:, :h], ifo[:, h : 2 * h], ifo[:, 2 * h :]
            g = np.tanh(z[:, 2 * h : 3 * h])
            C[:, t + 1] = f * C[:, t] + i * g
            tc = np.tanh(C[:, t + 1])
            H[:, t + 1] = o * tc
            gates[:, t, :h] = i
            gates[:, t, h : 2 * h] = f
            gates[:, t, 2 * h : 3 * h] = g
            gates[:, t, 3 * h :] = o
            tanhC[:, t] = tc
        if keep_cache:
            caches.append((seq, H, C, gates, tanhC))
        seq = H[:, 1:]
    last = seq[:, -1]
    logits = last @ p["out.W"].T + p["out.b"]
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits in forward pass")
    if keep_cache:
        return logits, (X, caches, last)
    return logits, None


def forward(model: EvaluatorModel, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and probabilities for one standardized (L, D) window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError(f"expected an (L, D) window, got shape {window.shape}")
    logits = forward_batch(model, window[None])[0][0]
    return logits, softmax(logits)


# --------------------------------------------------------------- loss + BPTT


def batch_loss(logits: np.ndarray, y: np.ndarray, class_weights=None) -> tuple[float, np.ndarray]:
    """Mean (optionally class-weighted) cross-entropy and d loss / d logits."""
    N = logits.shape[0]
    logp = log_softmax(logits)
    nll = -logp[np.arange(N), y]
    clamped = nll > _MAX_LOSS
    nll = np.minimum(nll, _MAX_LOSS)
    w = np.ones(N) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    wsum = w.sum()
    loss = float((w * nll).sum() / wsum)
    dlogits = np.exp(logp)
    dlogits[np.arange(N), y] -= 1.0
    dlogits *= (w / wsum)[:, None]
    dlogits[clamped] = 0.0
    return loss, dlogits


def backward(model: EvaluatorModel, X: np.ndarray, y, class_weights=None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient for every parameter block.

    ``X`` holds standardized windows (N, L, D); ``y`` class indices.
    """
    X = _check_input(model, X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise ValueError("backward needs a non-empty batch with one label per window")
    p = model.params
    h = model.h
    logits, (X, caches, last) = forward_batch(model, X, keep_cache=True)
    loss, dlogits = batch_loss(logits, y, class_weights)
    grads = {"out.W": dlogits.T @ last, "out.b": dlogits.sum(axis=0)}
    N, L, _ = X.shape
    dseq = np.zeros((N, L, h))
    dseq[:, -1] = dlogits @ p["out.W"]
    for l in reversed(range(model.layers)):
        inp, H, C, gates, tanhC = caches[l]
        U = p[f"lstm{l}.U"]
        dZ = np.empty((N, L, 4 * h))
        dh_next = np.zeros((N, h))
        dc_next = np.zeros((N, h))
        for t in reversed(range(L)):
            i, f, g, o = (gates[:, t, k * h : (k + 1) * h] for k in range(4))
            tc = tanhC[:, t]
            dh = dseq[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :h] = dc * g * i * (1.0 - i)
            dz[:, h : 2 * h] = dc * C[:, t] * f * (1.0 - f)
            dz[:, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
            dz[:, 3 * h :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ U
        flatZ = dZ.reshape(-1, 4 * h)
        grads[f"lstm{l}.W"] = flatZ.T @ inp.reshape(-1, inp.shape[-1])
        grads[f"lstm{l}.U"] = flatZ.T @ H[:, :-1].reshape(-1, h)
        grads[f"lstm{l}.b"] = flatZ.sum(axis=0)
        dseq = dZ @ p[f"lstm{l}.W"]
    flat = dseq.reshape(-1, h)
    grads["proj.W"] = flat.T @ X.reshape(-1, model.D)
    grads["proj.b"] = flat.sum(axis=0)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {k}")
    return loss, grads


def loss_only(model: EvaluatorModel, X: np.ndarray, y, class_weights=None) -> float:
    logits, _ = forward_batch(model, X)
    return batch_loss(logits, np.asarray(y), class_weights)[0]
