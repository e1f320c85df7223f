"""Scalar training losses with analytic gradients."""

from __future__ import annotations

import numpy as np

from .ops import _make
from .tensor import ShapeError, Tensor, as_tensor

PROB_CLIP = 1e-7


def _target(t) -> np.ndarray:
    return np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over every element."""
    pred = as_tensor(pred)
    target = _target(target)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss", pred.shape, target.shape)
    d = pred.data - target
    n = d.size
    return _make(np.mean(d * d), (pred,), lambda g: (g * 2.0 * d / n,), "mse_loss")


def multilabel_logloss(pred, target) -> Tensor:
    """Binary log loss summed over labels, averaged over the leading batch axis.

    ``pred`` holds probabilities; they are clipped to [1e-7, 1 - 1e-7]
    before taking logs. A single label vector counts as a batch of one.
    """
    pred = as_tensor(pred)
    y = _target(target)
    if pred.shape != y.shape:
        raise ShapeError("multilabel_logloss", pred.shape, y.shape)
    p = np.clip(pred.data, PROB_CLIP, 1.0 - PROB_CLIP)
    inside = (pred.data > PROB_CLIP) & (pred.data < 1.0 - PROB_CLIP)
    n = 1 if pred.ndim == 1 else int(np.prod(pred.shape[:-1]))
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / n

    def bw(g):
        return (g * inside * (-(y / p) + (1.0 - y) / (1.0 - p)) / n,)

    return _make(loss, (pred,), bw, "multilabel_logloss")


def categorical_logloss(pred, target) -> Tensor:
    """-sum(y log p) per sample, averaged over the leading batch axis."""
    pred = as_tensor(pred)
    y = _target(target)
    if pred.shape != y.shape:
        raise ShapeError("categorical_logloss", pred.shape, y.shape)
    p = np.clip(pred.data, PROB_CLIP, None)
    n = 1 if pred.ndim == 1 else int(np.prod(pred.shape[:-1]))
    loss = -np.sum(y * np.log(p)) / n
    inside = pred.data > PROB_CLIP
    return _make(loss, (pred,), lambda g: (g * inside * (-y / p) / n,), "categorical_logloss")
