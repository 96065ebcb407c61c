"""Desk-scale classifiers over flat parameter vectors.

Two architectures: multinomial logistic regression and a one-hidden-layer
tanh MLP. Parameters live in a single flat float64 vector so the federated
machinery can treat model updates as plain vectors; pack/unpack helpers map
between the flat vector and weight matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

__all__ = ["ModelSpec", "init_params", "logits", "loss_and_grad", "predict", "accuracy"]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor: kind is "logistic" or "mlp" (one tanh hidden layer)."""

    kind: str
    num_features: int
    num_classes: int
    hidden: int = 32

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.num_features < 1 or self.num_classes < 2:
            raise ValueError("need num_features >= 1 and num_classes >= 2")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp needs hidden >= 1")

    @property
    def dim(self) -> int:
        p, c, h = self.num_features, self.num_classes, self.hidden
        if self.kind == "logistic":
            return c * p + c
        return h * p + h + c * h + c


def _unpack(spec: ModelSpec, params: np.ndarray):
    p, c, h = spec.num_features, spec.num_classes, spec.hidden
    if spec.kind == "logistic":
        w = params[: c * p].reshape(c, p)
        b = params[c * p :]
        return w, b
    o1 = h * p
    o2 = o1 + h
    o3 = o2 + c * h
    return (
        params[:o1].reshape(h, p),
        params[o1:o2],
        params[o2:o3].reshape(c, h),
        params[o3:],
    )


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Small seeded Gaussian init (scale 0.01), biases zero."""
    rng = make_rng(seed)
    params = np.zeros(spec.dim)
    if spec.kind == "logistic":
        w, _ = _unpack(spec, params)
        w[:] = 0.01 * rng.standard_normal(w.shape)
    else:
        w1, _, w2, _ = _unpack(spec, params)
        w1[:] = 0.01 * rng.standard_normal(w1.shape)
        w2[:] = 0.01 * rng.standard_normal(w2.shape)
    return params


def logits(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    if spec.kind == "logistic":
        w, b = _unpack(spec, params)
        return x @ w.T + b
    w1, b1, w2, b2 = _unpack(spec, params)
    hidden = np.tanh(x @ w1.T + b1)
    return hidden @ w2.T + b2


def _softmax_ce(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d(loss)/d(scores) for integer labels."""
    m = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exps.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(m), y].mean())
    dscores = probs.copy()
    dscores[np.arange(m), y] -= 1.0
    return loss, dscores / m


def loss_and_grad(
    spec: ModelSpec,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Cross-entropy plus 0.5*weight_decay*||params||^2, with analytic gradient."""
    grad = np.zeros_like(params)
    if spec.kind == "logistic":
        w, _ = _unpack(spec, params)
        scores = x @ w.T + params[w.size :]
        loss, dscores = _softmax_ce(scores, y)
        gw, gb = _unpack(spec, grad)
        gw[:] = dscores.T @ x
        gb[:] = dscores.sum(axis=0)
    else:
        w1, b1, w2, b2 = _unpack(spec, params)
        pre = x @ w1.T + b1
        hidden = np.tanh(pre)
        scores = hidden @ w2.T + b2
        loss, dscores = _softmax_ce(scores, y)
        gw1, gb1, gw2, gb2 = _unpack(spec, grad)
        gw2[:] = dscores.T @ hidden
        gb2[:] = dscores.sum(axis=0)
        dhidden = dscores @ w2
        dpre = dhidden * (1.0 - hidden**2)
        gw1[:] = dpre.T @ x
        gb1[:] = dpre.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * float(params @ params)
        grad += weight_decay * params
    return loss, grad


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(spec, params, x), axis=1)


def accuracy(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float((predict(spec, params, x) == y).mean())
