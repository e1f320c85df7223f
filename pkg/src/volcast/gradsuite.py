"""Finite-difference gradient checks for every autodiff op and network block.

Each case builds a scalar function of random inputs at a tiny size. The
scalar is a random linear functional of the block's output so that no
output coordinate can cancel out of the check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor

TOL = 1e-5

Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _probe(rng, out: Tensor, w=None) -> Tensor:
    w = rng.standard_normal(out.shape) if w is None else w
    return ad.sum(ad.mul(out, Tensor(w)))


def _linear(rng, build, inputs, out_shape):
    w = rng.standard_normal(out_shape)
    return (lambda *xs: ad.sum(ad.mul(build(*xs), Tensor(w)))), inputs


def _op_cases() -> dict[str, Case]:
    c: dict[str, Case] = {}
    c["add"] = lambda r: _linear(r, ad.add, [_t(r, 2, 3), _t(r, 3)], (2, 3))
    c["sub"] = lambda r: _linear(r, ad.sub, [_t(r, 2, 3), _t(r, 2, 3)], (2, 3))
    c["mul"] = lambda r: _linear(r, ad.mul, [_t(r, 2, 3), _t(r, 2, 3)], (2, 3))
    c["scale"] = lambda r: _linear(r, lambda a: ad.scale(a, -1.7), [_t(r, 4)], (4,))
    c["neg"] = lambda r: _linear(r, ad.neg, [_t(r, 4)], (4,))
    c["absdiff"] = lambda r: _linear(r, ad.absdiff, [_t(r, 5), _t(r, 5)], (5,))
    c["matmul"] = lambda r: _linear(r, ad.matmul, [_t(r, 2, 3), _t(r, 3, 4)], (2, 4))
    c["matmul_batched"] = lambda r: _linear(r, ad.matmul, [_t(r, 2, 3, 4), _t(r, 2, 4, 2)], (2, 3, 2))
    c["matmul_vector"] = lambda r: _linear(r, ad.matmul, [_t(r, 3), _t(r, 3, 2)], (2,))
    c["concat"] = lambda r: _linear(r, lambda a, b: ad.concat([a, b]), [_t(r, 2, 3), _t(r, 2, 2)], (2, 5))
    c["sigmoid"] = lambda r: _linear(r, ad.sigmoid, [_t(r, 3, 2, scale=3)], (3, 2))
    c["tanh"] = lambda r: _linear(r, ad.tanh, [_t(r, 3, 2, scale=2)], (3, 2))
    c["relu"] = lambda r: _linear(r, ad.relu, [_t(r, 3, 4)], (3, 4))
    c["softplus"] = lambda r: _linear(r, ad.softplus, [_t(r, 3, 4, scale=3)], (3, 4))
    mask = np.array([[True, False, True, True], [True, True, False, False]])
    c["softmax"] = lambda r: _linear(r, ad.softmax, [_t(r, 2, 4)], (2, 4))
    c["softmax_masked"] = lambda r: _linear(r, lambda a: ad.softmax(a, mask), [_t(r, 2, 4)], (2, 4))
    c["max_over_axis"] = lambda r: _linear(r, lambda a: ad.max_over_axis(a, 1), [_t(r, 2, 4, 3)], (2, 3))
    c["max_over_axis_masked"] = lambda r: _linear(
        r, lambda a: ad.max_over_axis(a, 1, mask[:, :, None]), [_t(r, 2, 4, 3)], (2, 3))
    c["sum"] = lambda r: _linear(r, lambda a: ad.sum(a, axis=1), [_t(r, 2, 3, 2)], (2, 2))
    c["mean"] = lambda r: _linear(r, lambda a: ad.mean(a, axis=0), [_t(r, 3, 2)], (2,))
    c["reshape"] = lambda r: _linear(r, lambda a: ad.reshape(a, (3, 2)), [_t(r, 2, 3)], (3, 2))
    c["select"] = lambda r: _linear(r, lambda a: ad.select(a, 1, axis=1), [_t(r, 2, 3, 2)], (2, 2))
    c["slice_last"] = lambda r: _linear(r, lambda a: ad.slice_last(a, 1, 3), [_t(r, 2, 4)], (2, 2))
    c["stack"] = lambda r: _linear(r, lambda a, b: ad.stack([a, b], axis=1), [_t(r, 2, 3), _t(r, 2, 3)], (2, 2, 3))
    idx = np.array([2, 0, 2])
    c["take_rows"] = lambda r: _linear(r, lambda a: ad.take_rows(a, idx), [_t(r, 3, 2)], (3, 2))
    c["scatter_rows"] = lambda r: _linear(r, lambda a: ad.scatter_rows(a, np.array([3, 0]), 4), [_t(r, 2, 2)], (4, 2))
    cond = np.array([[True, False, True], [False, False, True]])
    c["where"] = lambda r: _linear(r, lambda a, b: ad.where(cond, a, b), [_t(r, 2, 3), _t(r, 2, 3)], (2, 3))
    seq_mask = np.array([[True, True, False, True], [True, False, False, False]])
    c["lstm_sequence"] = lambda r: _linear(
        r, lambda zx, U: ad.lstm_sequence(zx, U, seq_mask), [_t(r, 2, 4, 8), _t(r, 2, 8, scale=0.5)], (2, 4, 2))
    c["lstm_sequence_reverse"] = lambda r: _linear(
        r, lambda zx, U: ad.lstm_sequence(zx, U, seq_mask, reverse=True),
        [_t(r, 2, 4, 8), _t(r, 2, 8, scale=0.5)], (2, 4, 2))
    # active rows that are not a leading block take the general masked path
    gaps = np.array([[True, False, True, True], [True, True, False, True], [False, True, True, False]])
    c["lstm_sequence_gaps"] = lambda r: _linear(
        r, lambda zx, U: ad.lstm_sequence(zx, U, gaps), [_t(r, 3, 4, 8), _t(r, 2, 8, scale=0.5)], (3, 4, 2))

    def mse(r):
        y = Tensor(r.standard_normal(5))
        return (lambda p: ad.mse_loss(p, y)), [_t(r, 5)]

    def multilabel(r):
        y = Tensor((r.random((3, 4)) < 0.5).astype(float))
        return (lambda z: ad.multilabel_logloss(ad.sigmoid(z), y)), [_t(r, 3, 4)]

    def categorical(r):
        y = Tensor(np.eye(3)[[0, 2]])
        return (lambda z: ad.categorical_logloss(ad.softmax(z), y)), [_t(r, 2, 3)]

    c["mse_loss"] = mse
    c["multilabel_logloss"] = multilabel
    c["categorical_logloss"] = categorical
    return c


def _lstm_params(r, d_in, n) -> M.LstmParams:
    return M.LstmParams(_t(r, d_in, 4 * n, scale=0.5), _t(r, n, 4 * n, scale=0.5), _t(r, 4 * n, scale=0.2))


def _att_params(r, n_h, d_a) -> M.AttentionParams:
    return M.AttentionParams(_t(r, n_h, d_a), _t(r, d_a), _t(r, d_a))


def _dense_params(r, d_in, d_out) -> M.DenseParams:
    return M.DenseParams(_t(r, d_in, d_out, scale=0.5), _t(r, d_out, scale=0.2))


def _encoder_cases() -> dict[str, Case]:
    c: dict[str, Case] = {}
    d_w, n, d_a, L = 3, 3, 2, 4
    mask = np.array([True, True, True, False])

    def lstm_step(r):
        p = _lstm_params(r, d_w, n)
        w1, w2 = r.standard_normal(n), r.standard_normal(n)

        def f(x, h, C, W, U, b):
            h1, C1 = M.lstm_step(x, h, C, M.LstmParams(W, U, b))
            return ad.add(ad.sum(ad.mul(h1, Tensor(w1))), ad.sum(ad.mul(C1, Tensor(w2))))
        return f, [_t(r, d_w), _t(r, n), _t(r, n), p.W, p.U, p.b]

    def bilstm(r):
        fw, bw = _lstm_params(r, d_w, n), _lstm_params(r, d_w, n)
        w = r.standard_normal((L, 2 * n)) * mask[:, None]

        def f(x, *ps):
            return ad.sum(ad.mul(M.bilstm(x, M.LstmParams(*ps[:3]), M.LstmParams(*ps[3:]), mask), Tensor(w)))
        return f, [_t(r, L, d_w), fw.W, fw.U, fw.b, bw.W, bw.U, bw.b]

    def maxpool(r):
        w = r.standard_normal(2 * n)
        return (lambda h: ad.sum(ad.mul(M.encode_maxpool(h, mask), Tensor(w))),
                [_t(r, L, 2 * n)])

    def attention(r):
        p = _att_params(r, 2 * n, d_a)
        w = r.standard_normal(2 * n)
        return (lambda h, W, b, v: ad.sum(ad.mul(M.encode_attention(h, M.AttentionParams(W, b, v), mask), Tensor(w))),
                [_t(r, L, 2 * n), p.W, p.b, p.v])

    def bilstm_att_sentence(r):
        fw, bw = _lstm_params(r, d_w, n), _lstm_params(r, d_w, n)
        a = _att_params(r, 2 * n, d_a)
        w = r.standard_normal(2 * n)

        def f(x, *ps):
            h = M.bilstm(x, M.LstmParams(*ps[:3]), M.LstmParams(*ps[3:6]), mask)
            return ad.sum(ad.mul(M.encode_attention(h, M.AttentionParams(*ps[6:]), mask), Tensor(w)))
        return f, [_t(r, L, d_w), fw.W, fw.U, fw.b, bw.W, bw.U, bw.b, a.W, a.b, a.v]

    def wl_att(r):
        p = _att_params(r, d_w, d_a)
        w = r.standard_normal(d_w)
        return (lambda x, W, b, v: ad.sum(ad.mul(M.encode_wl_att(x, M.AttentionParams(W, b, v), mask), Tensor(w))),
                [_t(r, L, d_w), p.W, p.b, p.v])

    def nra(r):
        d_S, l_n = 4, 3
        p = _att_params(r, d_S, d_a)
        news_mask = np.array([[True, True, False], [True, False, False]])
        w = r.standard_normal((2, d_S))
        return (lambda s, W, b, v: ad.sum(ad.mul(M.nra(s, M.AttentionParams(W, b, v), news_mask), Tensor(w))),
                [_t(r, 2, l_n, d_S), p.W, p.b, p.v])

    def daily_avg(r):
        news_mask = np.array([[True, True, False], [True, False, False]])
        w = r.standard_normal((2, 4))
        return (lambda s: ad.sum(ad.mul(M.daily_average(s, news_mask), Tensor(w))), [_t(r, 2, 3, 4)])

    def zi_temporal(r):
        T, d_S, half = 3, 4, 2
        fw, bw = _lstm_params(r, d_S + 1, half), _lstm_params(r, d_S + 1, half)
        a = _att_params(r, 2 * half, d_a)
        has_news = np.array([[True, False, True], [False, False, True]])
        w = r.standard_normal((2, 2 * half))

        def f(dn, *ps):
            zi = M.zi_impute(dn, has_news)
            out = M.news_temporal_context(zi, M.LstmParams(*ps[:3]), M.LstmParams(*ps[3:6]), M.AttentionParams(*ps[6:]))
            return ad.sum(ad.mul(out, Tensor(w)))
        return f, [_t(r, 2, T, d_S), fw.W, fw.U, fw.b, bw.W, bw.U, bw.b, a.W, a.b, a.v]

    def price(r):
        T, d_MP = 3, 3
        p1, p2 = _lstm_params(r, 4, d_MP), _lstm_params(r, d_MP, d_MP)
        w = r.standard_normal((2, d_MP))
        return (lambda x, *ps: ad.sum(ad.mul(M.price_encoder(x, M.LstmParams(*ps[:3]), M.LstmParams(*ps[3:])),
                                             Tensor(w))),
                [_t(r, 2, T, 4), p1.W, p1.U, p1.b, p2.W, p2.U, p2.b])

    def stock(r):
        p = _dense_params(r, 3, 2)
        onehot = np.eye(3)[[2, 0]]
        w = r.standard_normal((2, 2))
        return (lambda W, b: ad.sum(ad.mul(M.stock_embed(onehot, M.DenseParams(W, b)), Tensor(w))), [p.W, p.b])

    def rcv1(r):
        d_S = 4
        p = _dense_params(r, d_S, M.RCV1_N_LABELS)
        y = Tensor((r.random((2, M.RCV1_N_LABELS)) < 0.3).astype(float))
        return (lambda S, W, b: ad.multilabel_logloss(M.rcv1_head(S, M.DenseParams(W, b)), y),
                [_t(r, 2, d_S), p.W, p.b])

    def snli(activation):
        def case(r):
            d_S = 3
            h, o = _dense_params(r, 4 * d_S, 5), _dense_params(r, 5, 3)
            y = Tensor(np.eye(3)[[1, 2]])

            def f(Sp, Sh, *ps):
                pr = M.snli_head(Sp, Sh, M.DenseParams(*ps[:2]), M.DenseParams(*ps[2:]), activation)
                return ad.categorical_logloss(pr, y)
            return f, [_t(r, 2, d_S), _t(r, 2, d_S), h.W, h.b, o.W, o.b]
        return case

    c.update({
        "lstm_step": lstm_step, "bilstm": bilstm, "encode_maxpool": maxpool, "encode_attention": attention,
        "bilstm_att_sentence": bilstm_att_sentence, "encode_wl_att": wl_att, "nra": nra,
        "daily_average": daily_avg, "zi_temporal_context": zi_temporal, "price_encoder": price,
        "stock_embed": stock, "rcv1_head": rcv1, "snli_head_relu": snli("relu"),
        "snli_head_softplus": snli("softplus"),
    })
    for kind in M.ENCODER_KINDS:
        for nra_on in (True, False):
            c[f"forward_{kind}{'' if nra_on else '_avg'}"] = _forward_case(kind, nra_on, False)
    c["forward_price_only"] = _forward_case("bilstm_att", True, True)
    return c


def tiny_config(kind: str = "bilstm_att", nra_enabled: bool = True, price_only: bool = False) -> M.ModelConfig:
    return M.ModelConfig(d_w=3, n=3, d_a=2, T=2, l_n=2, l_s=3, d_MN=2, d_MP=3, d_E=2, d_JR=4, n_stocks=2,
                         encoder_kind=kind, nra_enabled=nra_enabled, price_only=price_only,
                         d_S=4 if kind == "fixed_transferred" else None)


def tiny_batch(rng: np.random.Generator, cfg: M.ModelConfig, vocab_size: int = 6, B: int = 2) -> M.Batch:
    news = rng.integers(1, vocab_size, size=(B, cfg.T, cfg.l_n, cfg.l_s))
    news[0, 0, 1, :] = 0          # one missing headline
    news[0, 1, 0, 2:] = 0         # short headline
    news[1, 0] = 0                # a day without news
    nv = rng.standard_normal((B, cfg.T, cfg.l_n, cfg.d_S)) if cfg.encoder_kind == "fixed_transferred" else None
    stock = np.eye(cfg.n_stocks)[rng.integers(cfg.n_stocks, size=B)]
    return M.Batch(rng.standard_normal((B, cfg.T, 4)) * 0.02, news, stock, np.abs(rng.standard_normal(B)) * 0.01, nv)


def _forward_case(kind: str, nra_on: bool, price_only: bool) -> Case:
    def case(r):
        cfg = tiny_config(kind, nra_on, price_only)
        emb = r.standard_normal((6, cfg.d_w))
        net = M.VolatilityNet.init(cfg, emb, seed=int(r.integers(1 << 30)))
        net.scaling = {"price": 30.0, "target_mean": 0.01, "target_std": 0.5}
        for t in net.params.values():
            t.data = t.data + 0.1 * r.standard_normal(t.shape)   # move biases off zero
        batch = tiny_batch(r, cfg)
        names = sorted(net.params)
        w = r.standard_normal(2)

        def f(*ps):
            for k, p in zip(names, ps):
                net.params[k] = p
            return ad.sum(ad.mul(net.forward(batch), Tensor(w)))
        return f, [net.params[k] for k in names]
    return case


def cases() -> dict[str, Case]:
    return {**{f"op:{k}": v for k, v in _op_cases().items()}, **{f"block:{k}": v for k, v in _encoder_cases().items()}}


def run(names=None, seed: int = 0) -> dict[str, float]:
    """Maximum relative gradient error for each selected case."""
    all_cases = cases()
    selected = list(all_cases) if names is None else list(names)
    out = {}
    for i, name in enumerate(selected):
        rng = np.random.default_rng([seed, i])
        f, inputs = all_cases[name](rng)
        out[name] = ad.gradcheck(f, inputs)
    return out
