"""Planted-signal comparison: full model, daily-averaging variant, price-only model, GARCH(1,1)."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .corpus import align, vocab_from_vectors
from .metrics import EvalReport
from .model import ModelConfig, VolatilityNet
from .pipeline import (SplitSpec, TrainConfig, build_samples, check_news_alignment, evaluate_forecasts,
                       garch_forecasts, pool, predict, train)
from .synthetic import NewsShockConfig, news_shock_market

log = logging.getLogger(__name__)

VARIANTS = {
    "full": {"nra_enabled": True, "price_only": False},
    "no_nra": {"nra_enabled": False, "price_only": False},
    "price_only": {"price_only": True},
}

# a fixed, equal budget for every variant; keeps five seeds well inside a quarter hour on one core
EXPERIMENT_TRAINING = TrainConfig(max_epochs=10, patience=4, lr=2e-3, lr_decay=0.9)


@dataclass
class ExperimentResult:
    seed: int
    reports: dict[str, list[EvalReport]]
    seconds: float
    best_epochs: dict[str, int]

    def aggregate(self, model: str) -> EvalReport:
        return self.reports[model][0]


def planted_signal_run(seed: int, market_cfg: NewsShockConfig | None = None,
                       model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
                       variants=("full", "no_nra", "price_only"), with_garch: bool = True,
                       proxy_kind: str = "garman_klass") -> ExperimentResult:
    start = time.perf_counter()
    market_cfg = market_cfg or NewsShockConfig()
    market = news_shock_market(market_cfg, seed)
    dates = market.dates
    aligned = align(market.records, market.calendar, {sid: dates for sid in market.prices})
    check_news_alignment(aligned, market.records)
    vocab = vocab_from_vectors(market.embeddings, market_cfg.d_w)
    base = model_cfg or ModelConfig(d_w=market_cfg.d_w, n_stocks=market_cfg.n_stocks, l_n=market_cfg.max_headlines)
    base = dataclasses.replace(base, n_stocks=market_cfg.n_stocks, d_w=market_cfg.d_w, d_S=None)
    split = SplitSpec.by_fraction(dates, 0.7, 0.15)
    samples, _ = build_samples(market.prices, aligned, vocab, base, split)
    sets = pool(samples, base)
    tcfg = train_cfg or EXPERIMENT_TRAINING
    tcfg = dataclasses.replace(tcfg, seed=seed)
    reports: dict[str, list[EvalReport]] = {}
    best_epochs = {}
    for name in variants:
        cfg = dataclasses.replace(base, d_S=None, **VARIANTS[name])
        net = VolatilityNet.init(cfg, vocab.matrix, seed=seed)
        res = train(net, sets["train"], sets["validation"], tcfg)
        best_epochs[name] = res.best_epoch
        f = predict(res.model, sets["test"])
        reports[name] = evaluate_forecasts(f, sets["test"], proxy_kind, name, market.sectors)
        log.info("seed %d %s: best epoch %d, test mse %.4g", seed, name, res.best_epoch, reports[name][0].mse)
    if with_garch:
        f, _ = garch_forecasts(market.prices, sets["test"], split.validation[1], rng_seed=seed)
        reports["garch"] = evaluate_forecasts(f, sets["test"], proxy_kind, "garch", market.sectors)
    return ExperimentResult(seed, reports, time.perf_counter() - start, best_epochs)


def orderings(result: ExperimentResult) -> dict[str, bool]:
    r = {k: v[0] for k, v in result.reports.items()}
    return {
        "full<no_nra": r["full"].mse < r["no_nra"].mse,
        "no_nra<price_only": r["no_nra"].mse < r["price_only"].mse,
        "full_r2>garch_r2": r["full"].r2 > r["garch"].r2,
    }


def summary_rows(results: list[ExperimentResult]) -> list[dict]:
    rows = []
    for res in results:
        for name, reps in res.reports.items():
            a = reps[0]
            rows.append({"seed": res.seed, "model": name, "mse": a.mse, "mae": a.mae, "r2": a.r2,
                         "n": a.n, "best_epoch": res.best_epochs.get(name)})
    return rows


def mse_table(results: list[ExperimentResult]) -> np.ndarray:
    names = list(results[0].reports)
    return np.array([[res.reports[n][0].mse for n in names] for res in results])
