"""Synthetic market with a planted news-to-volatility channel.

Daily variances follow GARCH(1,1). On random days a stock receives a shock
headline containing a designated token, and its next trading day's
volatility is multiplied by ``lam``. The shock does not feed back into
the GARCH state, so the base process stays stationary. Distractor headlines
made of random words arrive on any day, shock days included, so a shock is
usually one headline among several. Intraday paths are zero-drift log random
walks opening at the previous close.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import HeadlineRecord, TradingCalendar, from_eastern, write_headlines_jsonl
from .marketdata import OhlcBar, PriceSeries, business_days, simulate_gbm_paths, write_ohlc_csv

SHOCK_TOKEN = "turmoil"


@dataclass
class NewsShockConfig:
    n_stocks: int = 5
    n_days: int = 1500
    lam: float = 2.0
    shock_prob: float = 0.15
    distractor_rate: float = 4.0
    max_headlines: int = 8
    a0: float = 4.5e-6
    a1: float = 0.05
    b1: float = 0.93
    n_steps: int = 50
    n_words: int = 300
    n_oov_words: int = 20
    d_w: int = 32
    headline_len: tuple[int, int] = (2, 6)
    start: str = "2005-01-03"
    sectors: tuple[str, ...] = ("technology", "energy")
    holidays: list[str] = field(default_factory=lambda: ["2005-07-04", "2005-12-26", "2006-12-25",
                                                         "2007-07-04", "2008-12-25", "2009-07-03"])

    @classmethod
    def from_dict(cls, d: dict) -> "NewsShockConfig":
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("headline_len", "sectors"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


@dataclass
class NewsShockMarket:
    prices: dict[str, PriceSeries]
    records: list[HeadlineRecord]
    embeddings: dict[str, np.ndarray]
    sectors: dict[str, str]
    surface_forms: dict[str, list[str]]
    calendar: TradingCalendar
    true_vol: dict[str, np.ndarray]
    shock_days: dict[str, np.ndarray]
    config: NewsShockConfig

    @property
    def dates(self) -> list[dt.date]:
        return next(iter(self.prices.values())).dates

    def write(self, root: str | Path) -> dict[str, str]:
        """Write the files the CLI consumes; returns their paths."""
        root = Path(root)
        (root / "prices").mkdir(parents=True, exist_ok=True)
        for sid, s in self.prices.items():
            write_ohlc_csv(s, root / "prices" / f"{sid}.csv")
        write_headlines_jsonl(self.records, root / "headlines.jsonl")
        with (root / "embeddings.txt").open("w") as fh:
            for tok, v in self.embeddings.items():
                fh.write(tok + " " + " ".join(repr(float(x)) for x in v) + "\n")
        with (root / "universe.tsv").open("w") as fh:
            fh.write("stock_id\tsector\n")
            for sid, sec in self.sectors.items():
                fh.write(f"{sid}\t{sec}\n")
        (root / "surface_forms.json").write_text(json.dumps(self.surface_forms, indent=2))
        (root / "holidays.txt").write_text("".join(f"{d.isoformat()}\n" for d in sorted(self.calendar.holidays)))
        (root / "generator.json").write_text(json.dumps(asdict(self.config), indent=2))
        return {
            "prices": str(root / "prices"), "headlines": str(root / "headlines.jsonl"),
            "embeddings": str(root / "embeddings.txt"), "universe": str(root / "universe.tsv"),
            "surface_forms": str(root / "surface_forms.json"), "holidays": str(root / "holidays.txt"),
        }


def _word(i: int) -> str:
    letters = "bcdfghjklmnprstvz"
    vowels = "aeiou"
    out = []
    while True:
        out.append(letters[i % len(letters)] + vowels[(i // len(letters)) % len(vowels)])
        i //= len(letters) * len(vowels)
        if i == 0:
            break
    return "".join(out) + "x"


def _timestamp(rng: np.random.Generator, day: dt.date, prev_day: dt.date) -> dt.datetime:
    """A publication time that aligns to trading ``day``: before or during its
    session, or after the previous session's close."""
    slot = rng.integers(3)
    if slot == 0:
        local = dt.datetime.combine(day, dt.time(6)) + dt.timedelta(seconds=int(rng.integers(0, 3.5 * 3600)))
    elif slot == 1:
        local = dt.datetime.combine(day, dt.time(9, 30)) + dt.timedelta(seconds=int(rng.integers(0, 6.5 * 3600)))
    else:
        local = dt.datetime.combine(prev_day, dt.time(16, 0, 1)) + dt.timedelta(seconds=int(rng.integers(0, 6 * 3600)))
    return from_eastern(local)


def news_shock_market(cfg: NewsShockConfig, seed: int) -> NewsShockMarket:
    rng = np.random.default_rng(seed)
    holidays = [dt.date.fromisoformat(d) for d in cfg.holidays]
    calendar = TradingCalendar(holidays)
    dates = business_days(dt.date.fromisoformat(cfg.start), cfg.n_days, holidays)
    words = [_word(i) for i in range(cfg.n_words)]
    oov = [_word(cfg.n_words + i) for i in range(cfg.n_oov_words)]
    emb_tokens = words + [SHOCK_TOKEN]
    stock_ids = [f"S{k:02d}" for k in range(cfg.n_stocks)]
    names = {sid: [sid.lower()] for sid in stock_ids}
    emb_tokens += sorted({t for v in names.values() for t in v})
    embeddings = {t: rng.standard_normal(cfg.d_w) / math.sqrt(cfg.d_w) for t in emb_tokens}

    prices, true_vol, shocks, records = {}, {}, {}, []
    persistence = cfg.a1 + cfg.b1
    lo, hi = cfg.headline_len
    for sid in stock_ids:
        shock = rng.random(cfg.n_days) < cfg.shock_prob
        shock[-1] = False
        z_open = 100.0 * math.exp(rng.normal(0, 0.3))
        s2 = cfg.a0 / (1.0 - persistence)
        vol = np.empty(cfg.n_days)
        bars = []
        prev_close = z_open
        for t in range(cfg.n_days):
            m = cfg.lam if t > 0 and shock[t - 1] else 1.0
            vol[t] = m * math.sqrt(s2)
            o, h, l, c = simulate_gbm_paths(vol[t], 1, cfg.n_steps, rng, prev_close)[0]
            bars.append(OhlcBar(dates[t], float(o), float(h), float(l), float(c)))
            # the shock is an overlay: the GARCH state sees the deflated return
            eps = (c / prev_close - 1.0) / m
            s2 = cfg.a0 + cfg.a1 * eps * eps + cfg.b1 * s2
            prev_close = float(c)
        prices[sid] = PriceSeries(sid, bars)
        true_vol[sid] = vol
        shocks[sid] = np.nonzero(shock)[0]

        for t in range(1, cfg.n_days):
            texts = []
            if shock[t]:
                body = list(rng.choice(words, size=int(rng.integers(lo, hi)) - 1))
                body.insert(int(rng.integers(len(body) + 1)), SHOCK_TOKEN)
                texts.append(body)
            n_distract = int(rng.poisson(cfg.distractor_rate))
            for _ in range(min(n_distract, cfg.max_headlines - len(texts))):
                pool = words + oov
                texts.append(list(rng.choice(pool, size=int(rng.integers(lo, hi)))))
            for body in texts:
                text = " ".join(names[sid] + body)
                # occasional all-unknown headline exercises the OOV path
                if rng.random() < 0.02:
                    text = " ".join(rng.choice(oov, size=3))
                records.append(HeadlineRecord(sid, _timestamp(rng, dates[t], dates[t - 1]), text))
    order = np.argsort([r.timestamp_utc.timestamp() for r in records], kind="stable")
    records = [records[i] for i in order]
    sectors = {sid: cfg.sectors[k % len(cfg.sectors)] for k, sid in enumerate(stock_ids)}
    forms = {sid: [" ".join(names[sid])] for sid in stock_ids}
    return NewsShockMarket(prices, records, embeddings, sectors, forms, calendar, true_vol, shocks, cfg)
