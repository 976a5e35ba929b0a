"""Dense layers with inverted dropout, sigmoid/BCE, momentum SGD and finite-difference checks.

Networks are chains of affine maps with no hidden nonlinearity; callers apply the
output sigmoid themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

BCE_EPS = 1e-7


@dataclass
class DenseNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} incompatible with bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input dim {w.shape[1]} != previous output dim")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        dropout_rate: float = 0.0,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, dropout_rate)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in ``[W0, b0, W1, b1, ...]`` order (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout_rate)

    def to_dict(self) -> dict:
        return {
            "dropout_rate": self.dropout_rate,
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DenseNet":
        weights = [np.asarray(l["weight"], dtype=float).reshape(l["shape"]) for l in obj["layers"]]
        biases = [np.asarray(l["bias"], dtype=float) for l in obj["layers"]]
        return cls(weights, biases, float(obj["dropout_rate"]))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    masks: list[Optional[np.ndarray]]
    squeeze: bool


def forward(
    net: DenseNet,
    x: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run ``x`` (one vector or an ``M x in`` batch) through the affine chain."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects {net.in_dim}")
    drop = mode == "train" and net.dropout_rate > 0.0
    if drop and rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    inputs, masks = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        h = h @ w.T + b
        mask = None
        if drop and k < last:
            keep = 1.0 - net.dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        masks.append(mask)
    out = h[0] if squeeze else h
    return out, ForwardCache(inputs, masks, squeeze)


def backward(
    net: DenseNet, cache: ForwardCache, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` and the input gradient for a cached forward pass."""
    g = np.asarray(upstream, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    for k in range(len(net.weights) - 1, -1, -1):
        if cache.masks[k] is not None:
            g = g * cache.masks[k]
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k]
    dx = g[0] if cache.squeeze else g
    return grads, dx


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(scores, labels, mask=None, eps: float = BCE_EPS) -> float:
    """Binary cross entropy summed over actions and averaged over the batch rows.

    With ``mask`` (same shape, 0/1), masked entries are ignored and the average runs
    over rows that keep at least one entry.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError(f"score shape {s.shape} != label shape {y.shape}")
    if s.ndim == 1:
        s, y = s[None, :], y[None, :]
    s = np.clip(s, eps, 1.0 - eps)
    per = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    if mask is None:
        return float(per.sum() / s.shape[0])
    m = np.asarray(mask, dtype=float).reshape(per.shape)
    rows = int(np.count_nonzero(m.any(axis=1)))
    if rows == 0:
        return 0.0
    return float((per * m).sum() / rows)


def bce_logit_grad(scores, labels, mask=None) -> np.ndarray:
    """d(bce_loss)/d(logits) for ``scores = sigmoid(logits)``, ignoring the clamp."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.ndim == 1:
        s, y = s[None, :], y[None, :]
    if mask is None:
        return (s - y) / s.shape[0]
    m = np.asarray(mask, dtype=float).reshape(s.shape)
    rows = int(np.count_nonzero(m.any(axis=1)))
    if rows == 0:
        return np.zeros_like(s)
    return (s - y) * m / rows


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "OptimizerState":
        return cls(velocity=[np.zeros_like(p) for p in params], **hyper)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """In-place update: ``v = momentum*v + grad + wd*param``, ``param -= lr*v``."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError("params, grads and velocity buffers must align")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g
        v += state.weight_decay * p
        p -= state.learning_rate * v


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: list[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def numeric_gradient(param: np.ndarray, loss_fn: Callable[[], float], step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    loss_fn: Callable[[], float],
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences of ``loss_fn``.

    ``loss_fn`` must read the live ``params`` arrays and be deterministic (no dropout).
    """
    errors = []
    for p, a in zip(params, analytic):
        num = numeric_gradient(p, loss_fn, step)
        errors.append(float(relative_error(np.asarray(a), num).max()) if p.size else 0.0)
    return GradCheckReport(max(errors) if errors else 0.0, errors, tolerance)


def net_loss_check(
    net: DenseNet,
    x: np.ndarray,
    labels: np.ndarray,
    tolerance: float = 1e-4,
    corrupt_bias: bool = False,
) -> GradCheckReport:
    """Grad-check ``net`` under a sigmoid + BCE head; ``corrupt_bias`` is a negative control."""
    out, cache = forward(net, x, "eval")
    s = sigmoid(out)
    grads, _ = backward(net, cache, bce_logit_grad(s, labels))
    if corrupt_bias:
        grads[-1] = grads[-1] + 0.1

    def loss():
        o, _ = forward(net, x, "eval")
        return bce_loss(sigmoid(o), labels)

    return grad_check(net.parameters(), grads, loss, tolerance)
