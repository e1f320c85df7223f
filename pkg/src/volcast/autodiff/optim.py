"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """Apply one Adam update in place and return ``params``.

    ``params`` maps names to arrays or Tensors; ``grads`` maps the same
    names to arrays. Names missing from ``grads`` are left untouched, but the
    step counter still advances.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        m, v = state.m[name], state.v[name]
        if m.shape != arr.shape or g.shape != arr.shape:
            raise ValueError(f"adam_step: shape mismatch for {name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        arr -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params
