"""OHLC bars, simple returns, range-based variance estimators and price simulators."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ESTIMATORS = ("parkinson", "garman_klass", "squared_return")
LN2 = math.log(2.0)
GK_CLOSE_COEF = 2.0 * LN2 - 1.0


class PriceError(ValueError):
    """Invalid price input."""


@dataclass(frozen=True)
class OhlcBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float

    def __post_init__(self):
        validate_bar(self.open, self.high, self.low, self.close)


def validate_bar(o: float, h: float, l: float, c: float) -> None:
    if not (o > 0 and h > 0 and l > 0 and c > 0):
        raise PriceError(f"prices must be positive: O={o} H={h} L={l} C={c}")
    if l > h:
        raise PriceError(f"low {l} above high {h}")
    if not (l <= o <= h and l <= c <= h):
        raise PriceError(f"open/close outside [low, high]: O={o} H={h} L={l} C={c}")


@dataclass
class PriceSeries:
    stock_id: str
    bars: list[OhlcBar]

    def __post_init__(self):
        for a, b in zip(self.bars, self.bars[1:]):
            if b.date <= a.date:
                raise PriceError(f"{self.stock_id}: dates not strictly increasing at {b.date}")

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]

    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars])

    def returns(self) -> np.ndarray:
        """Close-to-close simple returns; one shorter than the series."""
        c = self.closes()
        return c[1:] / c[:-1] - 1.0


@dataclass(frozen=True)
class DailyVolProxy:
    date: dt.date | None
    variance: float
    estimator_kind: str


def close_return(p_t: float, p_prev: float) -> float:
    if p_t <= 0 or p_prev <= 0:
        raise PriceError(f"prices must be positive: {p_t}, {p_prev}")
    return p_t / p_prev - 1.0


def price_features(bar: OhlcBar, close_prev: float) -> np.ndarray:
    """Open, high, low and close as simple returns over the previous close."""
    if close_prev <= 0:
        raise PriceError(f"previous close must be positive: {close_prev}")
    return np.array([bar.open, bar.high, bar.low, bar.close]) / close_prev - 1.0


def parkinson(bar: OhlcBar) -> DailyVolProxy:
    if bar.high < bar.low:
        raise PriceError("high below low")
    return DailyVolProxy(bar.date, math.log(bar.high / bar.low) ** 2 / (4.0 * LN2), "parkinson")


def garman_klass(bar: OhlcBar) -> DailyVolProxy:
    validate_bar(bar.open, bar.high, bar.low, bar.close)
    hl = math.log(bar.high / bar.low)
    co = math.log(bar.close / bar.open)
    return DailyVolProxy(bar.date, 0.5 * hl * hl - GK_CLOSE_COEF * co * co, "garman_klass")


def squared_return_proxy(r: float, date: dt.date | None = None) -> DailyVolProxy:
    return DailyVolProxy(date, r * r, "squared_return")


# vectorised forms used by the simulators and the pipeline

def parkinson_array(high, low) -> np.ndarray:
    return np.log(np.asarray(high) / np.asarray(low)) ** 2 / (4.0 * LN2)


def garman_klass_array(open_, high, low, close) -> np.ndarray:
    hl = np.log(np.asarray(high) / np.asarray(low))
    co = np.log(np.asarray(close) / np.asarray(open_))
    return 0.5 * hl * hl - GK_CLOSE_COEF * co * co


def estimate(series: PriceSeries, kind: str) -> list[DailyVolProxy]:
    """Daily variance proxies for every bar (squared_return skips the first bar)."""
    if kind == "parkinson":
        return [parkinson(b) for b in series.bars]
    if kind == "garman_klass":
        return [garman_klass(b) for b in series.bars]
    if kind == "squared_return":
        r = series.returns()
        return [squared_return_proxy(float(x), b.date) for x, b in zip(r, series.bars[1:])]
    raise ValueError(f"unknown estimator {kind!r}")


# --------------------------------------------------------------------------
# simulation


def simulate_gbm_paths(sigma, n_days: int, n_steps: int, rng: np.random.Generator,
                       open_price=100.0) -> np.ndarray:
    """(n_days, 4) array of open/high/low/close from zero-drift log random walks.

    ``sigma`` may be a scalar or one daily volatility per day; per-step log
    increments are Gaussian with std sigma/sqrt(n_steps), starting at
    ``open_price`` (scalar or per day).
    """
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n_days,))
    start = np.broadcast_to(np.asarray(open_price, dtype=np.float64), (n_days,))
    steps = rng.standard_normal((n_days, n_steps)) * (sig / math.sqrt(n_steps))[:, None]
    logp = np.cumsum(steps, axis=1)
    hi = np.maximum(logp.max(axis=1), 0.0)
    lo = np.minimum(logp.min(axis=1), 0.0)
    return np.stack([start, start * np.exp(hi), start * np.exp(lo), start * np.exp(logp[:, -1])], axis=1)


def simulate_gbm_day(sigma_daily: float, n_steps: int, rng_seed: int,
                     date: dt.date = dt.date(2000, 1, 3)) -> OhlcBar:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    o, h, l, c = simulate_gbm_paths(sigma_daily, 1, n_steps, np.random.default_rng(rng_seed))[0]
    return OhlcBar(date, float(o), float(h), float(l), float(c))


def efficiency_sample(n_days: int, n_steps: int, sigma: float, rng_seed: int,
                      chunk: int = 2000) -> dict[str, np.ndarray]:
    """Per-day variance proxies on simulated GBM days, keyed by estimator."""
    rng = np.random.default_rng(rng_seed)
    out = {k: [] for k in ESTIMATORS}
    done = 0
    while done < n_days:
        m = min(chunk, n_days - done)
        o, h, l, c = simulate_gbm_paths(sigma, m, n_steps, rng).T
        out["parkinson"].append(parkinson_array(h, l))
        out["garman_klass"].append(garman_klass_array(o, h, l, c))
        out["squared_return"].append((c / o - 1.0) ** 2)
        done += m
    return {k: np.concatenate(v) for k, v in out.items()}


def estimator_efficiency(estimator_kind: str, n_days: int, n_steps: int, sigma: float,
                         rng_seed: int) -> float:
    """Var[squared-return proxy] / Var[estimator] over simulated GBM days."""
    if n_days < 1000:
        raise ValueError("n_days must be >= 1000")
    if estimator_kind not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator_kind!r}")
    s = efficiency_sample(n_days, n_steps, sigma, rng_seed)
    return float(np.var(s["squared_return"]) / np.var(s[estimator_kind]))


# --------------------------------------------------------------------------
# CSV


def read_ohlc_csv(path: str | Path, stock_id: str | None = None) -> PriceSeries:
    path = Path(path)
    bars = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "open", "high", "low", "close"]:
            raise PriceError(f"{path}:1: expected header date,open,high,low,close")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) != 5:
                    raise PriceError(f"expected 5 fields, got {len(row)}")
                d = dt.date.fromisoformat(row[0].strip())
                o, h, l, c = (float(x) for x in row[1:])
                bars.append(OhlcBar(d, o, h, l, c))
            except (ValueError, PriceError) as exc:
                raise PriceError(f"{path}:{lineno}: {exc}") from None
    try:
        return PriceSeries(stock_id or path.stem, bars)
    except PriceError as exc:
        raise PriceError(f"{path}: {exc}") from None


def write_ohlc_csv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "open", "high", "low", "close"])
        for b in series.bars:
            w.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low), repr(b.close)])


def bars_from_array(dates: Sequence[dt.date], ohlc: np.ndarray) -> list[OhlcBar]:
    return [OhlcBar(d, float(o), float(h), float(l), float(c)) for d, (o, h, l, c) in zip(dates, ohlc)]


def business_days(start: dt.date, n: int, holidays: Iterable[dt.date] = ()) -> list[dt.date]:
    hol = set(holidays)
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5 and d not in hol:
            out.append(d)
        d += dt.timedelta(days=1)
    return out
