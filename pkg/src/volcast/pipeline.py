"""Dataset assembly, training with early stopping, prediction and evaluation."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from . import garch
from .corpus import (MARKET_CLOSE, AlignedDay, HeadlineRecord, Vocabulary, encode_day, kept_headline_ids,
                     to_eastern)
from .marketdata import PriceSeries, garman_klass_array, parkinson_array, price_features
from .metrics import EvalReport, evaluate as eval_forecast
from .model import Batch, ModelConfig, VolatilityNet

log = logging.getLogger(__name__)

PROXY_KINDS = ("garman_klass", "parkinson")


class PipelineError(ValueError):
    pass


# --------------------------------------------------------------------------
# splits and configuration


@dataclass(frozen=True)
class SplitSpec:
    """Inclusive calendar ranges; a sample belongs to the split holding its target date."""

    train: tuple[dt.date, dt.date]
    validation: tuple[dt.date, dt.date]
    test: tuple[dt.date, dt.date]

    def __post_init__(self):
        ranges = [self.train, self.validation, self.test]
        for name, (a, b) in zip(("train", "validation", "test"), ranges):
            if a > b:
                raise PipelineError(f"{name} range starts after it ends")
        if not (self.train[1] < self.validation[0] and self.validation[1] < self.test[0]):
            raise PipelineError("splits must be ordered train < validation < test without overlap")

    def which(self, d: dt.date) -> str | None:
        for name in ("train", "validation", "test"):
            a, b = getattr(self, name)
            if a <= d <= b:
                return name
        return None

    def to_dict(self) -> dict:
        return {k: [v[0].isoformat(), v[1].isoformat()] for k, v in
                (("train", self.train), ("validation", self.validation), ("test", self.test))}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        conv = lambda r: (dt.date.fromisoformat(r[0]), dt.date.fromisoformat(r[1]))  # noqa: E731
        return cls(conv(d["train"]), conv(d["validation"]), conv(d["test"]))

    @classmethod
    def by_fraction(cls, dates: Sequence[dt.date], train: float = 0.7, validation: float = 0.15) -> "SplitSpec":
        """Chronological split of a sorted date list."""
        n = len(dates)
        i = int(n * train)
        j = int(n * (train + validation))
        if not 0 < i < j < n:
            raise PipelineError("not enough dates to split")
        return cls((dates[0], dates[i - 1]), (dates[i], dates[j - 1]), (dates[j], dates[-1]))


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    lr_decay: float = 1.0  # learning rate is multiplied by this after every epoch

    def __post_init__(self):
        if not 0.0 < self.lr_decay <= 1.0:
            raise PipelineError("lr_decay must be in (0, 1]")
        if self.patience < 1:
            raise PipelineError("patience must be >= 1")
        if self.batch_size < 1:
            raise PipelineError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise PipelineError("max_epochs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# --------------------------------------------------------------------------
# samples


@dataclass
class Sample:
    price_window: np.ndarray
    news_window: np.ndarray
    stock_onehot: np.ndarray
    target: float
    stock_id: str = ""
    date: dt.date | None = None
    target_date: dt.date | None = None
    news_vectors: np.ndarray | None = None
    proxies: dict = field(default_factory=dict)

    def __post_init__(self):
        oh = np.asarray(self.stock_onehot)
        if not (np.sum(oh == 1) == 1 and np.sum(oh != 0) == 1):
            raise PipelineError("stock_onehot must contain exactly one 1")
        if not self.target >= 0:
            raise PipelineError(f"target must be >= 0, got {self.target}")

    @property
    def has_news(self) -> np.ndarray:
        return (self.news_window != 0).any(axis=(-1, -2))


@dataclass
class SampleSet:
    """Column-stacked samples, ready for batching."""

    price: np.ndarray
    news: np.ndarray
    stock: np.ndarray
    target: np.ndarray
    stock_ids: list[str]
    dates: list[dt.date]
    target_dates: list[dt.date]
    proxies: dict[str, np.ndarray]
    news_vectors: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.target)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], config: ModelConfig) -> "SampleSet":
        n = len(samples)
        if n == 0:
            return cls(np.zeros((0, config.T, 4)), np.zeros((0, config.T, config.l_n, config.l_s), dtype=np.int64),
                       np.zeros((0, config.n_stocks)), np.zeros(0), [], [], [],
                       {k: np.zeros(0) for k in PROXY_KINDS})
        nv = None
        if samples[0].news_vectors is not None:
            nv = np.stack([s.news_vectors for s in samples])
        return cls(
            price=np.stack([s.price_window for s in samples]),
            news=np.stack([s.news_window for s in samples]),
            stock=np.stack([s.stock_onehot for s in samples]).astype(np.float64),
            target=np.array([s.target for s in samples]),
            stock_ids=[s.stock_id for s in samples],
            dates=[s.date for s in samples],
            target_dates=[s.target_date for s in samples],
            proxies={k: np.array([s.proxies.get(k, np.nan) for s in samples]) for k in PROXY_KINDS},
            news_vectors=nv,
        )

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda seq: [seq[i] for i in idx]  # noqa: E731
        return SampleSet(
            self.price[idx], self.news[idx], self.stock[idx], self.target[idx],
            pick(self.stock_ids), pick(self.dates), pick(self.target_dates),
            {k: v[idx] for k, v in self.proxies.items()},
            None if self.news_vectors is None else self.news_vectors[idx],
        )

    def batch(self, idx=None) -> Batch:
        if idx is None:
            idx = np.arange(len(self))
        nv = None if self.news_vectors is None else self.news_vectors[idx]
        return Batch(self.price[idx], self.news[idx], self.stock[idx], self.target[idx], nv)

    def to_dict(self) -> dict:
        return {
            "format": "volcast-samples",
            "price": self.price.tolist(),
            "news": self.news.tolist(),
            "stock": self.stock.tolist(),
            "target": self.target.tolist(),
            "stock_ids": list(self.stock_ids),
            "dates": [d.isoformat() for d in self.dates],
            "target_dates": [d.isoformat() for d in self.target_dates],
            "proxies": {k: v.tolist() for k, v in self.proxies.items()},
            "news_vectors": None if self.news_vectors is None else self.news_vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, config: ModelConfig) -> "SampleSet":
        if d.get("format") != "volcast-samples":
            raise PipelineError("not a sample-set document")
        n = len(d["target"])
        if n == 0:
            return cls.from_samples([], config)
        dates = lambda k: [dt.date.fromisoformat(s) for s in d[k]]  # noqa: E731
        return cls(
            np.asarray(d["price"], dtype=np.float64).reshape(n, config.T, 4),
            np.asarray(d["news"], dtype=np.int64).reshape(n, config.T, config.l_n, config.l_s),
            np.asarray(d["stock"], dtype=np.float64).reshape(n, config.n_stocks),
            np.asarray(d["target"], dtype=np.float64),
            list(d["stock_ids"]), dates("dates"), dates("target_dates"),
            {k: np.asarray(v, dtype=np.float64) for k, v in d["proxies"].items()},
            None if d.get("news_vectors") is None else np.asarray(d["news_vectors"], dtype=np.float64),
        )


@dataclass
class BuildReport:
    emitted: dict[str, int]
    skipped_history: int
    outside_splits: int


def build_samples(prices: dict[str, PriceSeries], aligned: dict[str, Sequence[AlignedDay]],
                  vocab: Vocabulary | None, config: ModelConfig, split: SplitSpec,
                  stock_order: Sequence[str] | None = None,
                  sidecar: dict[str, np.ndarray] | None = None) -> tuple[dict[str, list[Sample]], BuildReport]:
    """Sliding-window samples per split.

    For bar index t (0-based) of a stock the window covers bars t-T+1..t;
    each window bar needs the previous close, so t >= T. The target is the
    Garman-Klass volatility of bar t+1. Samples go to the split containing
    bar t+1's date; days outside every split are dropped.
    """
    T, l_n, l_s = config.T, config.l_n, config.l_s
    order = list(stock_order) if stock_order is not None else sorted(prices)
    if len(order) != config.n_stocks:
        raise PipelineError(f"config.n_stocks={config.n_stocks} but {len(order)} stocks given")
    if not config.price_only and vocab is None:
        raise PipelineError("a vocabulary is needed unless price_only")
    if config.encoder_kind == "fixed_transferred" and not config.price_only and sidecar is None:
        raise PipelineError("fixed_transferred encoder needs a sidecar of precomputed vectors")
    out: dict[str, list[Sample]] = {"train": [], "validation": [], "test": []}
    skipped = 0
    outside = 0
    empty_day = np.zeros((l_n, l_s), dtype=np.int64)
    for k, sid in enumerate(order):
        series = prices[sid]
        bars = series.bars
        onehot = np.zeros(config.n_stocks)
        onehot[k] = 1.0
        days = {d.trading_date: d for d in aligned.get(sid, [])}
        feats = [None] + [price_features(bars[i], bars[i - 1].close) for i in range(1, len(bars))]
        news_rows: dict[int, np.ndarray] = {}
        vec_rows: dict[int, np.ndarray] = {}

        def day_news(i: int) -> tuple[np.ndarray, np.ndarray | None]:
            if i not in news_rows:
                day = days.get(bars[i].date)
                if day is None or config.price_only or vocab is None:
                    news_rows[i] = empty_day
                else:
                    news_rows[i] = encode_day(day, vocab, l_n, l_s)
                if sidecar is not None and not config.price_only:
                    v = np.zeros((l_n, config.d_S))
                    if day is not None:
                        for r, hid in enumerate(kept_headline_ids(day, vocab, l_n)):
                            if hid not in sidecar:
                                raise PipelineError(f"headline {hid} missing from the sidecar")
                            v[r] = sidecar[hid]
                    vec_rows[i] = v
            return news_rows[i], vec_rows.get(i)

        n_bars = len(bars)
        skipped += min(T, max(n_bars - 1, 0))
        for t in range(T, n_bars - 1):
            target_bar = bars[t + 1]
            which = split.which(target_bar.date)
            if which is None:
                outside += 1
                continue
            price_window = np.stack(feats[t - T + 1: t + 1])
            news = [day_news(i) for i in range(t - T + 1, t + 1)]
            news_window = np.stack([x[0] for x in news])
            nv = np.stack([x[1] for x in news]) if sidecar is not None and not config.price_only else None
            o, h, lo, c = target_bar.open, target_bar.high, target_bar.low, target_bar.close
            gk = float(garman_klass_array(o, h, lo, c))
            pk = float(parkinson_array(h, lo))
            out[which].append(Sample(
                price_window, news_window, onehot, math.sqrt(max(gk, 0.0)), sid, bars[t].date,
                target_bar.date, nv, {"garman_klass": math.sqrt(max(gk, 0.0)), "parkinson": math.sqrt(pk)},
            ))
    report = BuildReport({k: len(v) for k, v in out.items()}, skipped, outside)
    check_no_leakage(out)
    return out, report


def check_no_leakage(splits: dict[str, Sequence]) -> None:
    """Every test target date is after every date a train/validation sample touches.

    Works on lists of Sample or on SampleSet objects.
    """
    def dates_of(s) -> tuple[list[dt.date], list[dt.date]]:
        if isinstance(s, SampleSet):
            return s.target_dates, s.dates
        return [x.target_date for x in s], [x.date for x in s]

    seen_max = None
    for name in ("train", "validation"):
        if name in splits and len(splits[name]):
            tds, _ = dates_of(splits[name])
            m = max(tds)
            seen_max = m if seen_max is None else max(seen_max, m)
    if seen_max is None or "test" not in splits or not len(splits["test"]):
        return
    tds, _ = dates_of(splits["test"])
    if min(tds) <= seen_max:
        raise PipelineError(f"leakage: test target {min(tds)} not after training/validation date {seen_max}")


def check_news_alignment(aligned: dict[str, Sequence[AlignedDay]], records: Sequence[HeadlineRecord]) -> None:
    """Every headline on trading day d was published no later than 16:00 Eastern on d.

    A window ending on day t reads only days up to t, so this bounds every
    headline a sample sees by the close of its prediction day.
    """
    by_id = {r.id: r for r in records}
    for sid, days in aligned.items():
        for day in days:
            close = dt.datetime.combine(day.trading_date, MARKET_CLOSE)
            for hid in day.ids:
                local = to_eastern(by_id[hid].timestamp_utc).replace(tzinfo=None)
                if local > close:
                    raise PipelineError(f"{sid}: headline {hid} at {local} aligned to {day.trading_date}")


def pool(split_samples: dict[str, list[Sample]], config: ModelConfig) -> dict[str, SampleSet]:
    return {k: SampleSet.from_samples(v, config) for k, v in split_samples.items()}


# --------------------------------------------------------------------------
# batching


class BatchSampler:
    """Pooled multi-stock batches; every call to ``epoch`` reshuffles."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise PipelineError("no samples to batch")
        if batch_size < 1:
            raise PipelineError("batch_size must be >= 1")
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def epoch(self) -> list[np.ndarray]:
        perm = self.rng.permutation(self.n)
        return [perm[i: i + self.batch_size] for i in range(0, self.n, self.batch_size)]


def multi_stock_batches(n_samples: int, batch_size: int, seed: int, n_epochs: int = 1) -> Iterator[list[np.ndarray]]:
    sampler = BatchSampler(n_samples, batch_size, seed)
    for _ in range(n_epochs):
        yield sampler.epoch()


# --------------------------------------------------------------------------
# scaling, training, prediction


def fit_scaling(train: SampleSet) -> dict:
    """Input and target standardisation fitted on training samples only."""
    ps = float(np.std(train.price))
    tm = float(np.mean(train.target))
    ts = float(np.std(train.target))
    return {
        "price": 1.0 / ps if ps > 0 else 1.0,
        "target_mean": tm,
        "target_std": ts if ts > 0 else 1.0,
    }


def predict(model: VolatilityNet, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    out = np.empty(len(samples))
    for i in range(0, len(samples), batch_size):
        idx = np.arange(i, min(i + batch_size, len(samples)))
        out[idx] = model.predict(samples.batch(idx))
    return out


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


@dataclass
class TrainResult:
    model: VolatilityNet
    best_epoch: int
    best_val_mse: float
    history: list[EpochRecord]
    stop_reason: str

    def history_dicts(self) -> list[dict]:
        return [asdict(h) for h in self.history]


def _snapshot(model: VolatilityNet) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.params.items()}


def _restore(model: VolatilityNet, snap: dict[str, np.ndarray]) -> None:
    for k, v in snap.items():
        model.params[k].data = v.copy()


def train(model: VolatilityNet, train_set: SampleSet, val_set: SampleSet, cfg: TrainConfig,
          refit_scaling: bool = True, time_budget: float | None = None) -> TrainResult:
    """Adam on mini-batches with validation-monitored checkpointing.

    Epoch 0 records the untrained model's metrics. After each later epoch
    the validation MSE is compared with the best so far; the best weights
    are kept and training stops after ``patience`` epochs without
    improvement, at ``max_epochs``, or on a non-finite loss.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise PipelineError("training and validation sets must be non-empty")
    if refit_scaling:
        model.scaling = fit_scaling(train_set)
    inv_var = 1.0 / model.scaling["target_std"] ** 2
    state = ad.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    sampler = BatchSampler(len(train_set), cfg.batch_size, cfg.seed)
    params = model.params
    start = time.perf_counter()

    def val_mse() -> float:
        p = predict(model, val_set)
        return float(np.mean((p - val_set.target) ** 2))

    t0 = time.perf_counter()
    history = [EpochRecord(0, float(np.mean((predict(model, train_set) - train_set.target) ** 2)), val_mse(),
                           time.perf_counter() - t0)]
    best_val = math.inf
    best_epoch = 0
    best = _snapshot(model)
    stale = 0
    reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        diverged = False
        for idx in sampler.epoch():
            batch = train_set.batch(idx)
            pred = model.forward(batch)
            # standardised-unit loss keeps gradient magnitudes independent of the volatility scale
            loss = ad.scale(ad.mse_loss(pred, ad.Tensor(batch.target)), inv_var)
            if not math.isfinite(loss.item()):
                diverged = True
                break
            model.zero_grad()
            ad.backward(loss)
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in params.items()}
            ad.adam_step(params, grads, state)
            model.zero_grad()
            losses.append(loss.item() / inv_var)
        if diverged:
            reason = "diverged"
            log.warning("non-finite loss at epoch %d; keeping epoch %d weights", epoch, best_epoch)
            break
        v = val_mse()
        if not math.isfinite(v):
            reason = "diverged"
            break
        history.append(EpochRecord(epoch, float(np.mean(losses)), v, time.perf_counter() - t0))
        state.lr *= cfg.lr_decay
        log.info("epoch %d train %.4g val %.4g", epoch, history[-1].train_mse, v)
        if v < best_val:
            best_val, best_epoch, best, stale = v, epoch, _snapshot(model), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                reason = "early_stopping"
                break
        if time_budget is not None and time.perf_counter() - start > time_budget:
            reason = "time_budget"
            break
    _restore(model, best)
    return TrainResult(model, best_epoch, best_val, history, reason)


# --------------------------------------------------------------------------
# evaluation


def read_universe(path: str | Path) -> dict[str, str]:
    """Stock universe TSV: stock_id, sector (an optional header row is skipped)."""
    out = {}
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise PipelineError(f"{path}:{lineno}: expected stock_id<TAB>sector")
            if lineno == 1 and row[0].strip().lower() == "stock_id":
                continue
            out[row[0].strip()] = row[1].strip()
    return out


def write_universe(sectors: dict[str, str], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write("stock_id\tsector\n")
        for sid, sec in sectors.items():
            fh.write(f"{sid}\t{sec}\n")


def evaluate_forecasts(forecast: np.ndarray, samples: SampleSet, proxy_kind: str, model_name: str,
                       sectors: dict[str, str] | None = None) -> list[EvalReport]:
    """Aggregate report followed by one report per sector (sorted by name).

    Negative model outputs are clamped to zero here, at the reporting boundary.
    """
    if len(samples) == 0:
        raise PipelineError("empty test split")
    if proxy_kind not in PROXY_KINDS:
        raise PipelineError(f"unknown proxy {proxy_kind!r}")
    f = np.maximum(np.asarray(forecast, dtype=np.float64), 0.0)
    proxy = samples.proxies[proxy_kind]
    reports = [eval_forecast(f, proxy, proxy_kind, model_name, "all")]
    if sectors:
        tags = np.array([sectors.get(s, "unknown") for s in samples.stock_ids])
        for sec in sorted(set(tags)):
            m = tags == sec
            if m.sum() >= 3:
                reports.append(eval_forecast(f[m], proxy[m], proxy_kind, model_name, sec))
    return reports


def garch_forecasts(prices: dict[str, PriceSeries], samples: SampleSet, fit_until: dt.date,
                    rng_seed: int = 0) -> tuple[np.ndarray, dict[str, garch.GarchFit]]:
    """One-step GARCH(1,1) volatility forecasts aligned with ``samples``.

    Each stock is fitted once on the returns dated up to ``fit_until``; the
    variance is then filtered forward through the remaining returns with
    the fitted parameters, and the forecast for a sample ending on day t is
    the conditional variance for day t+1 given returns through t.
    """
    fits = {}
    paths: dict[str, dict[dt.date, float]] = {}
    for sid in sorted(set(samples.stock_ids)):
        series = prices[sid]
        r = series.returns()
        rdates = series.dates[1:]
        n_fit = sum(1 for d in rdates if d <= fit_until)
        f = garch.fit(r[:n_fit], rng_seed=rng_seed)
        fits[sid] = f
        full = garch.filter_variance(r, f.params, initial_variance=float(f.cond_variance[0]))
        nxt = garch.one_step_path(full)
        paths[sid] = {d: float(v) for d, v in zip(rdates, nxt)}
    out = np.array([math.sqrt(paths[s][d]) for s, d in zip(samples.stock_ids, samples.dates)])
    return out, fits


def reports_tsv(reports: Sequence[EvalReport]) -> str:
    return "\n".join([EvalReport.tsv_header(), *(r.tsv_row() for r in reports)]) + "\n"
