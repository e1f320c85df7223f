"""Neural building blocks and the hierarchical multimodal volatility network.

Every layer works on a leading batch axis. Row-vector convention is used
throughout, so an affine map is ``x @ W + b`` with ``W`` of shape
(in_features, out_features); that is the transpose of the column-vector
``W x`` notation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff import checkpoint as ckpt

GATES = ("i", "f", "o", "c")
ENCODER_KINDS = ("bilstm_att", "bilstm_mp", "wl_att", "fixed_transferred")
SNLI_LABELS = ("entailment", "contradiction", "neutral")
RCV1_N_LABELS = 55


# --------------------------------------------------------------------------
# parameters


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class LstmParams:
    """Gate weights stacked along the output axis in the order i, f, o, c.

    ``W`` is (d_in, 4n), ``U`` is (n, 4n) and ``b`` is (4n,).
    """

    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_g, U_g, b_g) for one gate in column-vector layout: n×d_in, n×n, n."""
        k = GATES.index(name)
        n = self.n
        sl = slice(k * n, (k + 1) * n)
        return self.W.data[:, sl].T, self.U.data[:, sl].T, self.b.data[sl]

    def n_params(self) -> int:
        return self.W.size + self.U.size + self.b.size

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.b": self.b}

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, n: int) -> "LstmParams":
        W = np.concatenate([glorot(rng, d_in, n) for _ in GATES], axis=1)
        U = np.concatenate([glorot(rng, n, n) for _ in GATES], axis=1)
        return cls(Tensor(W, True), Tensor(U, True), Tensor(np.zeros(4 * n), True))

    @classmethod
    def zeros(cls, d_in: int, n: int) -> "LstmParams":
        return cls(Tensor(np.zeros((d_in, 4 * n)), True), Tensor(np.zeros((n, 4 * n)), True),
                   Tensor(np.zeros(4 * n), True))


@dataclass
class AttentionParams:
    """``W`` is (n_h, d_a), ``b`` is (d_a,), ``v`` is (d_a,)."""

    W: Tensor
    b: Tensor
    v: Tensor

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b, f"{prefix}.v": self.v}

    @classmethod
    def init(cls, rng: np.random.Generator, n_h: int, d_a: int) -> "AttentionParams":
        return cls(
            Tensor(glorot(rng, n_h, d_a), True),
            Tensor(np.zeros(d_a), True),
            Tensor(glorot(rng, d_a, 1, shape=(d_a,)), True),
        )


@dataclass
class DenseParams:
    W: Tensor
    b: Tensor

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "DenseParams":
        return cls(Tensor(glorot(rng, d_in, d_out), True), Tensor(np.zeros(d_out), True))


def dense(x, p: DenseParams) -> Tensor:
    return ad.add(ad.matmul(x, p.W), p.b)


# --------------------------------------------------------------------------
# recurrent layers


def _lstm_cell(zx, h_prev, C_prev, p: LstmParams) -> tuple[Tensor, Tensor]:
    # zx = x W + b, precomputed for the whole sequence
    n = p.n
    z = ad.add(zx, ad.matmul(h_prev, p.U))
    gates = ad.sigmoid(ad.slice_last(z, 0, 3 * n))
    i = ad.slice_last(gates, 0, n)
    f = ad.slice_last(gates, n, 2 * n)
    o = ad.slice_last(gates, 2 * n, 3 * n)
    cand = ad.tanh(ad.slice_last(z, 3 * n, 4 * n))
    C = ad.add(ad.mul(i, cand), ad.mul(f, C_prev))
    h = ad.mul(o, ad.tanh(C))
    return h, C


def lstm_step(x_t, h_prev, C_prev, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step. Inputs are (d_in,) / (n,) vectors or (B, ·) batches.

    Gates i, f, o are sigmoids and the candidate memory is a tanh of the
    affine maps of x_t and h_prev; C = i*cand + f*C_prev, h = o*tanh(C).
    """
    return _lstm_cell(ad.add(ad.matmul(x_t, p.W), p.b), h_prev, C_prev, p)


def lstm(x, p: LstmParams, mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Run an LSTM over axis 1 of ``x`` (B, L, d_in); returns hidden states (B, L, n).

    Where ``mask[:, t]`` is False the state is carried through unchanged, so
    padded steps never disturb the recurrence in either direction.
    Outputs are in sequence order even when ``reverse`` is set.
    """
    x = ad.as_tensor(x)
    zx = ad.add(ad.matmul(x, p.W), p.b)
    return ad.lstm_sequence(zx, p.U, mask, reverse)


def bilstm(words, fwd: LstmParams, bwd: LstmParams, mask: np.ndarray | None = None) -> Tensor:
    """Forward and backward passes concatenated per step: (B, L, d) -> (B, L, 2n).

    A 2-D input (L, d) is treated as a batch of one and returns (L, 2n).
    """
    words = ad.as_tensor(words)
    squeeze = words.ndim == 2
    if squeeze:
        words = ad.reshape(words, (1,) + words.shape)
        mask = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
    out = ad.concat([lstm(words, fwd, mask), lstm(words, bwd, mask, reverse=True)])
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    return out


# --------------------------------------------------------------------------
# pooling / attention


def _batched(x: Tensor, mask):
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[None, :]
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    return x, np.asarray(mask, dtype=bool), squeeze


def encode_maxpool(hidden, mask: np.ndarray | None = None) -> Tensor:
    """Per-coordinate max over unmasked steps: (B, L, h) -> (B, h)."""
    x, mask, squeeze = _batched(ad.as_tensor(hidden), mask)
    if not mask.any(axis=1).all():
        raise ValueError("encode_maxpool: fully masked sequence")
    out = ad.max_over_axis(x, axis=1, mask=mask[:, :, None])
    return ad.reshape(out, out.shape[1:]) if squeeze else out


def encode_attention(hidden, p: AttentionParams, mask: np.ndarray | None = None,
                     return_weights: bool = False):
    """Additive self-attention pooling: (B, L, h) -> (B, h).

    Scores are ``v · sigmoid(h_t W + b)``; masked steps get zero weight.
    """
    x, mask, squeeze = _batched(ad.as_tensor(hidden), mask)
    if not mask.any(axis=1).all():
        raise ValueError("encode_attention: fully masked sequence")
    B, L, nh = x.shape
    proj = ad.sigmoid(ad.add(ad.matmul(x, p.W), p.b))
    scores = ad.matmul(proj, ad.reshape(p.v, (p.v.shape[0], 1)))
    alpha = ad.softmax(ad.reshape(scores, (B, L)), mask)
    pooled = ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, L)), x), (B, nh))
    if squeeze:
        pooled = ad.reshape(pooled, (nh,))
        alpha = ad.reshape(alpha, (L,))
    return (pooled, alpha) if return_weights else pooled


def encode_wl_att(words, p: AttentionParams, mask: np.ndarray | None = None) -> Tensor:
    """Word-level attention: the attention pooling applied straight to embeddings."""
    return encode_attention(words, p, mask)


def nra(day_sentences, p: AttentionParams, news_mask: np.ndarray | None = None,
        return_weights: bool = False):
    """News relevance attention over a day's headline vectors: (D, l_n, d_S) -> (D, d_S)."""
    return encode_attention(day_sentences, p, news_mask, return_weights=return_weights)


def daily_average(day_sentences, news_mask: np.ndarray | None = None) -> Tensor:
    """Unweighted mean of the unmasked headline vectors."""
    x, mask, squeeze = _batched(ad.as_tensor(day_sentences), news_mask)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("daily_average: day without headlines")
    B, L, d = x.shape
    w = (mask / counts[:, None]).reshape(B, 1, L)
    out = ad.reshape(ad.matmul(Tensor(w), x), (B, d))
    return ad.reshape(out, (d,)) if squeeze else out


def zi_impute(dn_sequence, has_news: np.ndarray) -> Tensor:
    """Zero-fill no-news days and append a missing-news indicator: (..., d) -> (..., d+1)."""
    dn = ad.as_tensor(dn_sequence)
    has_news = np.asarray(has_news, dtype=bool)
    if has_news.shape != dn.shape[:-1]:
        raise ad.ShapeError("zi_impute", dn.shape, has_news.shape)
    filled = ad.where(has_news, dn, Tensor(np.zeros(dn.shape)))
    indicator = Tensor((~has_news).astype(np.float64)[..., None])
    return ad.concat([filled, indicator])


def news_temporal_context(zi_sequence, fwd: LstmParams, bwd: LstmParams,
                          att: AttentionParams) -> Tensor:
    """BiLSTM over the daily vectors followed by attention pooling: (B, T, d) -> (B, 2n)."""
    return encode_attention(bilstm(zi_sequence, fwd, bwd), att)


def price_encoder(price_window, first: LstmParams, second: LstmParams) -> Tensor:
    """Two stacked LSTMs; the last hidden state of the second one: (B, T, 4) -> (B, n2)."""
    x = ad.as_tensor(price_window)
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    hs = lstm(lstm(x, first), second)
    out = ad.select(hs, hs.shape[1] - 1, axis=1)
    return ad.reshape(out, out.shape[1:]) if squeeze else out


def stock_embed(onehot, p: DenseParams) -> Tensor:
    """Affine map of a one-hot stock indicator: (B, n_stocks) -> (B, d_E)."""
    arr = np.asarray(getattr(onehot, "data", onehot), dtype=np.float64)
    if not (np.isin(arr, (0.0, 1.0)).all() and (arr.sum(axis=-1) == 1).all()):
        raise ValueError("stock_embed: input is not one-hot")
    return dense(ad.as_tensor(onehot), p)


# --------------------------------------------------------------------------
# transfer-learning heads


def rcv1_head(S, p: DenseParams) -> Tensor:
    """Multilabel topic head: sigmoid(S W + b) with 55 outputs."""
    if p.W.shape[1] != RCV1_N_LABELS:
        raise ad.ShapeError("rcv1_head", p.W.shape, (p.W.shape[0], RCV1_N_LABELS))
    return ad.sigmoid(dense(S, p))


def snli_features(S_p, S_h) -> Tensor:
    """[S_p, S_h, |S_p - S_h|, S_p * S_h]."""
    return ad.concat([S_p, S_h, ad.absdiff(S_p, S_h), ad.mul(S_p, S_h)])


def snli_head(S_p, S_h, hidden: DenseParams, out: DenseParams, activation: str = "relu") -> Tensor:
    """Sentence-pair classifier over (entailment, contradiction, neutral).

    Both sentence vectors must come from the same encoder parameters.
    ``activation`` picks the hidden FC non-linearity: "relu" or "softplus".
    """
    act = {"relu": ad.relu, "softplus": ad.softplus}[activation]
    return ad.softmax(dense(act(dense(snli_features(S_p, S_h), hidden)), out))


# --------------------------------------------------------------------------
# full network


@dataclass
class ModelConfig:
    d_w: int = 16
    n: int = 16
    d_a: int = 16
    T: int = 5
    l_n: int = 4
    l_s: int = 12
    d_MN: int = 16
    d_MP: int = 16
    d_E: int = 4
    d_JR: int = 32
    n_stocks: int = 1
    encoder_kind: str = "bilstm_att"
    nra_enabled: bool = True
    price_only: bool = False
    d_S: int | None = None
    precomputed_path: str | None = None

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.d_S is None:
            if self.encoder_kind in ("bilstm_att", "bilstm_mp"):
                self.d_S = 2 * self.n
            elif self.encoder_kind == "wl_att":
                self.d_S = self.d_w
            else:
                raise ValueError("fixed_transferred needs an explicit d_S")
        if self.encoder_kind in ("bilstm_att", "bilstm_mp") and self.d_S != 2 * self.n:
            raise ValueError("d_S must equal 2n for BiLSTM encoders")
        if self.encoder_kind == "wl_att" and self.d_S != self.d_w:
            raise ValueError("d_S must equal d_w for the word-level attention encoder")
        for name in ("d_w", "n", "d_a", "T", "l_n", "l_s", "d_MN", "d_MP", "d_E", "d_JR", "n_stocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_MN % 2:
            raise ValueError("d_MN must be even (it is a BiLSTM output)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Batch:
    """Stacked model inputs.

    ``news`` holds token indices (B, T, l_n, l_s) with 0 as padding;
    ``news_vectors`` (B, T, l_n, d_S) is only used by the fixed_transferred
    encoder, which still reads the headline mask from ``news``.
    """

    price: np.ndarray
    news: np.ndarray
    stock: np.ndarray
    target: np.ndarray | None = None
    news_vectors: np.ndarray | None = None

    def __len__(self) -> int:
        return self.price.shape[0]


@dataclass
class VolatilityNet:
    config: ModelConfig
    params: dict[str, Tensor]
    embeddings: np.ndarray | None = None
    # input/target standardisation fitted on the training split
    scaling: dict = field(default_factory=lambda: {"price": 1.0, "target_mean": 0.0, "target_std": 1.0})

    @classmethod
    def init(cls, config: ModelConfig, embeddings: np.ndarray | None = None, seed: int = 0) -> "VolatilityNet":
        rng = np.random.default_rng(seed)
        c = config
        P: dict[str, Tensor] = {}
        if not c.price_only:
            if c.encoder_kind in ("bilstm_att", "bilstm_mp"):
                P.update(LstmParams.init(rng, c.d_w, c.n).tensors("sent.fwd"))
                P.update(LstmParams.init(rng, c.d_w, c.n).tensors("sent.bwd"))
            if c.encoder_kind in ("bilstm_att", "wl_att"):
                P.update(AttentionParams.init(rng, c.d_S, c.d_a).tensors("sent.att"))
            if c.nra_enabled:
                P.update(AttentionParams.init(rng, c.d_S, c.d_a).tensors("nra"))
            half = c.d_MN // 2
            P.update(LstmParams.init(rng, c.d_S + 1, half).tensors("news.fwd"))
            P.update(LstmParams.init(rng, c.d_S + 1, half).tensors("news.bwd"))
            P.update(AttentionParams.init(rng, c.d_MN, c.d_a).tensors("news.att"))
        P.update(LstmParams.init(rng, 4, c.d_MP).tensors("price.l1"))
        P.update(LstmParams.init(rng, c.d_MP, c.d_MP).tensors("price.l2"))
        P.update(DenseParams.init(rng, c.n_stocks, c.d_E).tensors("stock"))
        d_joint = c.d_MP + c.d_E + (0 if c.price_only else c.d_MN)
        P.update(DenseParams.init(rng, d_joint, c.d_JR).tensors("joint"))
        P.update(DenseParams.init(rng, c.d_JR, 1).tensors("out"))
        if embeddings is not None and embeddings.shape[1] != c.d_w:
            raise ad.ShapeError("embeddings", embeddings.shape, (embeddings.shape[0], c.d_w))
        return cls(config, P, embeddings)

    # parameter groups
    def _lstm(self, prefix: str) -> LstmParams:
        P = self.params
        return LstmParams(P[f"{prefix}.W"], P[f"{prefix}.U"], P[f"{prefix}.b"])

    def _att(self, prefix: str) -> AttentionParams:
        P = self.params
        return AttentionParams(P[f"{prefix}.W"], P[f"{prefix}.b"], P[f"{prefix}.v"])

    def _dense(self, prefix: str) -> DenseParams:
        return DenseParams(self.params[f"{prefix}.W"], self.params[f"{prefix}.b"])

    def n_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # ---- sub-networks -----------------------------------------------------

    def encode_sentences(self, tokens: np.ndarray) -> Tensor:
        """Encode H headlines given as (H, L) token indices (0 = padding) to (H, d_S)."""
        c = self.config
        mask = tokens != 0
        if not mask.any(axis=1).all():
            raise ValueError("encode_sentences: empty headline")
        # columns past the longest headline are pure padding and change nothing
        L = int(np.nonzero(mask.any(axis=0))[0].max()) + 1
        tokens, mask = tokens[:, :L], mask[:, :L]
        kind = c.encoder_kind
        if kind == "wl_att":
            return encode_wl_att(Tensor(self.embeddings[tokens]), self._att("sent.att"), mask)
        # longest first, so the recurrence only computes the rows still inside their headline
        order = np.argsort(-mask.sum(axis=1), kind="stable")
        tokens, mask = tokens[order], mask[order]
        words = Tensor(self.embeddings[tokens])
        hidden = bilstm(words, self._lstm("sent.fwd"), self._lstm("sent.bwd"), mask)
        if kind == "bilstm_att":
            S = encode_attention(hidden, self._att("sent.att"), mask)
        else:
            S = encode_maxpool(hidden, mask)
        return ad.take_rows(S, np.argsort(order))

    def daily_news(self, news: np.ndarray, news_vectors: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        """Daily news vectors (B, T, d_S) and the has-news flags (B, T)."""
        c = self.config
        B, T, l_n, _ = news.shape
        headline_mask = (news != 0).any(axis=-1)
        day_mask = headline_mask.any(axis=-1)
        flat_days = day_mask.reshape(-1)
        D = int(flat_days.sum())
        if D == 0:
            return Tensor(np.zeros((B, T, c.d_S))), day_mask
        day_hl = headline_mask.reshape(B * T, l_n)[flat_days]
        rows = np.nonzero(day_hl.reshape(-1))[0]
        if c.encoder_kind == "fixed_transferred":
            if news_vectors is None:
                raise ValueError("fixed_transferred encoder needs precomputed news vectors")
            vecs = news_vectors.reshape(B * T, l_n, c.d_S)[flat_days].reshape(D * l_n, c.d_S)[rows]
            S = Tensor(vecs)
        else:
            toks = news.reshape(B * T, l_n, -1)[flat_days].reshape(D * l_n, -1)[rows]
            # overlapping windows repeat the same headlines; encode each distinct one once
            uniq, inverse = np.unique(toks, axis=0, return_inverse=True)
            S = self.encode_sentences(uniq)
            if len(uniq) < len(toks):
                S = ad.take_rows(S, inverse.reshape(-1))
        per_day = ad.reshape(ad.scatter_rows(S, rows, D * l_n), (D, l_n, c.d_S))
        if c.nra_enabled:
            dn = nra(per_day, self._att("nra"), day_hl)
        else:
            dn = daily_average(per_day, day_hl)
        dn_all = ad.scatter_rows(dn, np.nonzero(flat_days)[0], B * T)
        return ad.reshape(dn_all, (B, T, c.d_S)), day_mask

    def market_news(self, news: np.ndarray, news_vectors: np.ndarray | None = None) -> Tensor:
        dn, has_news = self.daily_news(news, news_vectors)
        zi = zi_impute(dn, has_news)
        return news_temporal_context(zi, self._lstm("news.fwd"), self._lstm("news.bwd"), self._att("news.att"))

    def forward(self, batch: Batch) -> Tensor:
        """Predicted next-day volatility for every sample in ``batch``, shape (B,)."""
        c = self.config
        price = np.asarray(batch.price, dtype=np.float64)
        B = price.shape[0]
        if price.shape[1:] != (c.T, 4):
            raise ad.ShapeError("forward.price", price.shape, (B, c.T, 4))
        if batch.stock.shape != (B, c.n_stocks):
            raise ad.ShapeError("forward.stock", batch.stock.shape, (B, c.n_stocks))
        parts = []
        if not c.price_only:
            news = np.asarray(batch.news)
            if news.shape[:2] != (B, c.T):
                raise ad.ShapeError("forward.news", news.shape, (B, c.T, c.l_n, c.l_s))
            parts.append(self.market_news(news, batch.news_vectors))
        sp = self.scaling["price"]
        parts.append(price_encoder(Tensor(price * sp), self._lstm("price.l1"), self._lstm("price.l2")))
        parts.append(stock_embed(batch.stock, self._dense("stock")))
        joint = ad.relu(dense(ad.concat(parts), self._dense("joint")))
        z = ad.reshape(dense(joint, self._dense("out")), (B,))
        return ad.add(ad.scale(z, self.scaling["target_std"]), self.scaling["target_mean"])

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).data.copy()

    # ---- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        tensors = dict(self.params)
        if self.embeddings is not None:
            tensors["__embeddings__"] = self.embeddings
        ckpt.save(tensors, path, extra={"model_config": self.config.to_dict(), "scaling": self.scaling})

    @classmethod
    def load(cls, path: str | Path) -> "VolatilityNet":
        arrays, doc = ckpt.load(path)
        emb = arrays.pop("__embeddings__", None)
        config = ModelConfig.from_dict(doc["model_config"])
        params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        scaling = doc.get("scaling") or {"price": 1.0, "target_mean": 0.0, "target_std": 1.0}
        return cls(config, params, emb, dict(scaling))


def save_config(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))
