"""Differentiable operations on :class:`Tensor`.

Elementwise binary ops accept equal shapes, or a right operand whose shape
is a suffix of the left one (broadcast over leading batch axes). Anything
else raises :class:`ShapeError`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor


def _make(data, parents, backward_fn, op) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(op, sa, sb)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a) -> Tensor:
    return scale(a, -1.0)


def absdiff(a, b) -> Tensor:
    """Elementwise |a - b|; the subgradient at a == b is taken as 0."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("absdiff", a, b)
    d = a.data - b.data
    s = np.sign(d)
    sa, sb = a.shape, b.shape
    return _make(np.abs(d), (a, b), lambda g: (_unbroadcast(g * s, sa), -_unbroadcast(g * s, sb)), "absdiff")


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., k) and ``b`` of shape (k, m).

    Both operands may instead carry identical leading batch axes,
    (..., n, k) @ (..., k, m).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if b.ndim == 2:
        out = ad @ bd

        def bw(g):
            # constant inputs such as fixed word vectors need no gradient
            ga = g @ bd.T if a.requires_grad else None
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
            return ga, gb

        return _make(out, (a, b), bw, "matmul")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch axes differ")
    out = ad @ bd

    def bw_batched(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(out, (a, b), bw_batched, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if axis != -1 and axis != ts[0].ndim - 1:
        raise ShapeError("concat", *(t.shape for t in ts), detail="only the last axis is supported")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat", *(t.shape for t in ts))
    sizes = [t.shape[-1] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, bounds, axis=-1)

    return _make(np.concatenate([t.data for t in ts], axis=-1), ts, bw, "concat")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated stably."""
    a = as_tensor(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(y, (a,), lambda g: (g * s,), "softplus")


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. Entries where ``mask`` is False get weight 0.

    Every row must keep at least one unmasked entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError("softmax", x.shape, mask.shape, detail="mask shape")
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row is fully masked")
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), bw, "softmax")


def max_over_axis(a, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Maximum along ``axis``; ties go to the lowest index.

    Positions where ``mask`` is False never win. The gradient flows only to
    the winning position.
    """
    a = as_tensor(a)
    x = a.data
    axis = axis % x.ndim
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("max_over_axis: a slice is fully masked")
        x = np.where(mask, x, -np.inf)
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    y = np.take_along_axis(a.data, idx, axis=axis)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(np.squeeze(y, axis=axis), (a,), bw, "max")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _make(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    axis = axis % a.ndim
    return _make(
        a.data.sum(axis=axis), (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),), "sum",
    )


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


# --- structural ops -------------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def select(a, index: int, axis: int) -> Tensor:
    """Slice a single position out of ``axis`` (the axis is dropped)."""
    a = as_tensor(a)
    axis = axis % a.ndim
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), bw, "select")


def slice_last(a, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _make(a.data[..., start:stop], (a,), bw, "slice_last")


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError("stack", *(t.shape for t in ts))
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return [np.take(g, i, axis=ax) for i in range(len(ts))]

    return _make(out, ts, bw, "stack")


def take_rows(a, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0 (rows may repeat; gradients scatter-add)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "take_rows")


def scatter_rows(a, index: np.ndarray, n_rows: int) -> Tensor:
    """Place row i of ``a`` at row ``index[i]`` of a zero tensor with ``n_rows`` rows.

    ``index`` must not repeat.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if len(index) != a.shape[0]:
        raise ShapeError("scatter_rows", a.shape, index.shape)
    out = np.zeros((n_rows,) + a.shape[1:])
    out[index] = a.data
    return _make(out, (a,), lambda g: (g[index],), "scatter_rows")


def where(cond: np.ndarray, a, b) -> Tensor:
    """Pick ``a`` where ``cond`` holds, else ``b``. ``cond`` broadcasts over trailing axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("where", a.shape, b.shape)
    cond = np.asarray(cond, dtype=bool)
    while cond.ndim < a.ndim:
        cond = cond[..., None]
    c = np.broadcast_to(cond, a.shape)
    return _make(
        np.where(c, a.data, b.data), (a, b),
        lambda g: (np.where(c, g, 0.0), np.where(c, 0.0, g)), "where",
    )


def lstm_sequence(zx, U, mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Fused LSTM recurrence over a whole sequence, differentiated by BPTT.

    ``zx`` (B, L, 4n) holds the input projections plus bias with gate blocks
    ordered i, f, o, candidate; ``U`` is (n, 4n). The state starts at zero.
    Returns the hidden states (B, L, n) in sequence order; with ``reverse``
    the recurrence runs from the last step to the first. Where ``mask`` (B, L)
    is False the previous state is carried through unchanged.
    """
    zx, U = as_tensor(zx), as_tensor(U)
    if zx.ndim != 3 or U.ndim != 2:
        raise ShapeError("lstm_sequence", zx.shape, U.shape)
    n = U.shape[0]
    B, L, k = zx.shape
    if U.shape != (n, 4 * n) or k != 4 * n:
        raise ShapeError("lstm_sequence", zx.shape, U.shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, L):
            raise ShapeError("lstm_sequence", zx.shape, mask.shape, detail="mask shape")
    Ud = U.data
    order = range(L - 1, -1, -1) if reverse else range(L)
    H = np.zeros((B, L, n))
    h = np.zeros((B, n))
    C = np.zeros((B, n))
    half = np.concatenate([np.full(3 * n, 0.5), np.ones(n)])
    cache = []
    for t in order:
        # rows sorted by length make the active set a prefix; only it is computed
        na, m = B, None
        if mask is not None and not mask[:, t].all():
            col = mask[:, t]
            na = int(col.sum())
            if not col[:na].all():
                na, m = B, col[:, None]
        z = zx.data[:na, t] + h[:na] @ Ud
        # one tanh over all four blocks: sigmoid(x) = (1 + tanh(x / 2)) / 2
        act = np.tanh(z * half)
        gates = 0.5 + 0.5 * act[:, : 3 * n]
        i, f, o = gates[:, :n], gates[:, n: 2 * n], gates[:, 2 * n:]
        cand = act[:, 3 * n:]
        C_a = i * cand + f * C[:na]
        tc = np.tanh(C_a)
        h_a = o * tc
        if m is not None:
            h_a = np.where(m, h_a, h)
            C_a = np.where(m, C_a, C)
        cache.append((t, na, h[:na], C[:na], gates, cand, tc, m))
        if na == B:
            h, C = h_a, C_a
        else:
            h, C = h.copy(), C.copy()
            h[:na], C[:na] = h_a, C_a
        H[:, t] = h

    def bw(G):
        dzx = np.zeros((B, L, 4 * n))
        h_prevs = np.zeros((B, L, n))
        dh = np.zeros((B, n))
        dC = np.zeros((B, n))
        for t, na, h_prev, C_prev, gates, cand, tc, m in reversed(cache):
            i, f, o = gates[:, :n], gates[:, n: 2 * n], gates[:, 2 * n:]
            gh_all = dh + G[:, t]
            gh, gC = gh_all[:na], dC[:na]
            if m is not None:
                keep_h, keep_C = np.where(m, 0.0, gh), np.where(m, 0.0, gC)
                gh, gC = np.where(m, gh, 0.0), np.where(m, gC, 0.0)
            dCt = gC + gh * o * (1.0 - tc * tc)
            dz = dzx[:na, t]
            dz[:, :n] = dCt * cand
            dz[:, n: 2 * n] = dCt * C_prev
            dz[:, 2 * n: 3 * n] = gh * tc
            dz[:, : 3 * n] *= gates * (1.0 - gates)
            dz[:, 3 * n:] = dCt * i * (1.0 - cand * cand)
            h_prevs[:na, t] = h_prev
            dh_a = dz @ Ud.T
            dC_a = dCt * f
            if m is not None:
                dh_a = dh_a + keep_h
                dC_a = dC_a + keep_C
            if na == B:
                dh, dC = dh_a, dC_a
            else:
                # rows past the prefix carried their state, so their gradient passes through
                dh, dC = gh_all, dC.copy()
                dh[:na], dC[:na] = dh_a, dC_a
        dU = h_prevs.reshape(-1, n).T @ dzx.reshape(-1, 4 * n)
        return dzx, dU

    return _make(H, (zx, U), bw, "lstm_sequence")


def _install_operators() -> None:
    Tensor.__add__ = lambda s, o: add(s, o)
    Tensor.__radd__ = lambda s, o: add(o, s)
    Tensor.__sub__ = lambda s, o: sub(s, o)
    Tensor.__rsub__ = lambda s, o: sub(o, s)
    Tensor.__mul__ = lambda s, o: mul(s, o)
    Tensor.__rmul__ = lambda s, o: mul(o, s)
    Tensor.__neg__ = lambda s: neg(s)
    Tensor.__matmul__ = lambda s, o: matmul(s, o)


_install_operators()
