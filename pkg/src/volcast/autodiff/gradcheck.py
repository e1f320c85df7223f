"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``f(*inputs)`` must return a scalar Tensor. Every input with
    ``requires_grad`` is probed element by element; the error per element is
    ``|a - n| / max(1, |a| + |n|)``.
    """
    for x in inputs:
        x.zero_grad()
    out = f(*inputs)
    backward(out)
    worst = 0.0
    for x in inputs:
        if not x.requires_grad:
            continue
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(1.0, abs(a) + abs(num))
            worst = max(worst, err)
    for x in inputs:
        x.zero_grad()
    return worst
