"""Command-line entry point: ``volcast <command> --config cfg.json --seed N --out path``."""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import corpus, garch, gradsuite, marketdata, pipeline
from .experiment import EXPERIMENT_TRAINING, orderings, planted_signal_run, summary_rows
from .model import ModelConfig, VolatilityNet
from .synthetic import NewsShockConfig, news_shock_market

log = logging.getLogger("volcast")

COMMANDS = ("simulate-gbm", "simulate-garch", "estimate", "garch-fit", "garch-forecast", "ingest", "align",
            "build-dataset", "train", "predict", "evaluate", "gradcheck", "efficiency", "simulate-corpus",
            "experiment")


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# io helpers


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj, out: str | None) -> None:
    _emit(json.dumps(obj, indent=2) + "\n", out)


def _need(cfg: dict, key: str):
    if key not in cfg:
        raise CliError(f"config is missing {key!r}")
    return cfg[key]


def _load_prices(path: str | Path) -> dict[str, marketdata.PriceSeries]:
    p = Path(path)
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files:
        raise CliError(f"no price files under {p}")
    return {f.stem: marketdata.read_ohlc_csv(f) for f in files}


def _calendar(cfg: dict) -> corpus.TradingCalendar:
    return corpus.TradingCalendar.from_file(cfg["holidays"]) if cfg.get("holidays") else corpus.TradingCalendar()


def _returns_from(cfg: dict) -> np.ndarray:
    if "returns" in cfg:
        src = cfg["returns"]
        if isinstance(src, list):
            return np.asarray(src, dtype=np.float64)
        return np.asarray(json.loads(Path(src).read_text())["returns"], dtype=np.float64)
    if "prices" in cfg:
        return marketdata.read_ohlc_csv(cfg["prices"]).returns()
    raise CliError("config needs 'returns' or 'prices'")


# --------------------------------------------------------------------------
# commands


def cmd_simulate_gbm(cfg: dict, seed: int, out: str | None) -> None:
    """Chained GBM days (each opens at the previous close) as an OHLC CSV."""
    rng = np.random.default_rng(seed)
    n_days = int(cfg.get("n_days", 250))
    sigma = float(cfg.get("sigma", 0.02))
    n_steps = int(cfg.get("n_steps", 390))
    price = float(cfg.get("open_price", 100.0))
    dates = marketdata.business_days(dt.date.fromisoformat(cfg.get("start", "2000-01-03")), n_days)
    rows = []
    for d in dates:
        o, h, lo, c = marketdata.simulate_gbm_paths(sigma, 1, n_steps, rng, price)[0]
        rows.append(marketdata.OhlcBar(d, float(o), float(h), float(lo), float(c)))
        price = float(c)
    series = marketdata.PriceSeries(cfg.get("stock_id", "SIM"), rows)
    if out:
        marketdata.write_ohlc_csv(series, out)
    else:
        _emit_json({"bars": [[b.date.isoformat(), b.open, b.high, b.low, b.close] for b in rows]}, None)


def cmd_simulate_garch(cfg: dict, seed: int, out: str | None) -> None:
    p = garch.GarchParams(float(cfg.get("mu", 0.0)), float(cfg.get("a0", 1e-6)), float(cfg.get("a1", 0.1)),
                          float(cfg.get("b1", 0.85)))
    r = garch.simulate_garch(p, int(cfg.get("n", 1000)), seed)
    _emit_json({"params": dataclasses.asdict(p), "returns": r.tolist()}, out)


def cmd_estimate(cfg: dict, seed: int, out: str | None) -> None:
    series = marketdata.read_ohlc_csv(_need(cfg, "prices"))
    kinds = cfg.get("kinds", [cfg.get("kind", "garman_klass")])
    lines = ["date\testimator_kind\tvariance\tvolatility"]
    for kind in kinds:
        for e in marketdata.estimate(series, kind):
            lines.append(f"{e.date.isoformat()}\t{kind}\t{e.variance!r}\t{math.sqrt(max(e.variance, 0.0))!r}")
    _emit("\n".join(lines) + "\n", out)


def cmd_garch_fit(cfg: dict, seed: int, out: str | None) -> None:
    r = _returns_from(cfg)
    f = garch.fit(r, n_restarts=int(cfg.get("n_restarts", 5)), max_iter=int(cfg.get("max_iter", 2000)),
                  rng_seed=seed)
    _emit(f.to_json() + "\n", out)


def cmd_garch_forecast(cfg: dict, seed: int, out: str | None) -> None:
    f = garch.load_fit_json(_need(cfg, "fit"))
    fc = garch.forecast_multi_step(f, int(cfg.get("horizon", 10)))
    v = fc.expected_variance
    _emit_json({"horizon": fc.horizon, "variance": v.tolist(), "volatility": np.sqrt(v).tolist(),
                "unconditional_variance": fc.unconditional_variance}, out)


def cmd_ingest(cfg: dict, seed: int, out: str | None) -> None:
    """Validate a headline JSONL file; headlines without a stock are matched via surface forms."""
    forms = corpus.read_surface_forms(cfg["surface_forms"]) if cfg.get("surface_forms") else None
    records, rejected = [], []
    with Path(_need(cfg, "headlines")).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if "stock" not in obj and forms is not None:
                    matched = sorted(corpus.match_stock(str(obj.get("text", "")), forms))
                    if not matched:
                        raise corpus.CorpusError("no stock mentioned")
                    records.extend(corpus.parse_headline({**obj, "stock": sid}) for sid in matched)
                else:
                    records.append(corpus.parse_headline(obj))
            except (json.JSONDecodeError, corpus.CorpusError) as exc:
                rejected.append({"line": lineno, "reason": str(exc)})
    summary = json.dumps({"accepted": len(records), "rejected": rejected}) + "\n"
    if out:
        corpus.write_headlines_jsonl(records, out)
        sys.stdout.write(summary)
    else:
        for r in records:
            sys.stdout.write(json.dumps({"id": r.id, "stock": r.stock_id, "utc": r.timestamp_utc.isoformat(),
                                         "text": r.text}) + "\n")
        sys.stderr.write(summary)


def cmd_align(cfg: dict, seed: int, out: str | None) -> None:
    records, rejected = corpus.read_headlines_jsonl(_need(cfg, "headlines"))
    cal = _calendar(cfg)
    trading = None
    if cfg.get("prices"):
        trading = {sid: s.dates for sid, s in _load_prices(cfg["prices"]).items()}
    aligned = corpus.align(records, cal, trading)
    doc = {
        "histogram": corpus.category_histogram(records, cal),
        "rejected": rejected,
        "stocks": {sid: [{"date": d.trading_date.isoformat(), "ids": d.ids, "headlines": d.headlines}
                         for d in days] for sid, days in aligned.items()},
    }
    _emit_json(doc, out)


def _dataset_doc(cfg: dict) -> dict:
    prices = _load_prices(_need(cfg, "prices"))
    records, rejected = corpus.read_headlines_jsonl(_need(cfg, "headlines"))
    cal = _calendar(cfg)
    aligned = corpus.align(records, cal, {sid: s.dates for sid, s in prices.items()})
    pipeline.check_news_alignment(aligned, records)
    mc = ModelConfig.from_dict({**cfg.get("model", {}), "n_stocks": len(prices)})
    vocab = None
    if not mc.price_only:
        vocab = corpus.build_vocab([d for days in aligned.values() for d in days], _need(cfg, "embeddings"))
        if vocab.d_w != mc.d_w:
            mc = dataclasses.replace(mc, d_w=vocab.d_w, d_S=None if mc.encoder_kind != "fixed_transferred" else mc.d_S)
    sidecar = corpus.read_sidecar(cfg["sidecar"]) if cfg.get("sidecar") else None
    if "split" in cfg:
        split = pipeline.SplitSpec.from_dict(cfg["split"])
    else:
        all_dates = sorted({d for s in prices.values() for d in s.dates})
        fr = cfg.get("split_fractions", [0.7, 0.15])
        split = pipeline.SplitSpec.by_fraction(all_dates, fr[0], fr[1])
    samples, report = pipeline.build_samples(prices, aligned, vocab, mc, split, sidecar=sidecar)
    sets = pipeline.pool(samples, mc)
    sectors = pipeline.read_universe(cfg["universe"]) if cfg.get("universe") else {}
    return {
        "format": "volcast-dataset",
        "model_config": mc.to_dict(),
        "split": split.to_dict(),
        "prices": str(cfg["prices"]),
        "sectors": sectors,
        "vocab": None if vocab is None else vocab.tokens(),
        "embeddings": None if vocab is None else vocab.matrix.tolist(),
        "report": {**dataclasses.asdict(report), "rejected_headlines": len(rejected)},
        "sets": {k: v.to_dict() for k, v in sets.items()},
    }


def _load_dataset(path: str) -> tuple[dict, ModelConfig, dict[str, pipeline.SampleSet], np.ndarray | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "volcast-dataset":
        raise CliError(f"{path} is not a dataset file")
    mc = ModelConfig.from_dict(doc["model_config"])
    sets = {k: pipeline.SampleSet.from_dict(v, mc) for k, v in doc["sets"].items()}
    emb = None if doc.get("embeddings") is None else np.asarray(doc["embeddings"], dtype=np.float64)
    return doc, mc, sets, emb


def cmd_build_dataset(cfg: dict, seed: int, out: str | None) -> None:
    doc = _dataset_doc(cfg)
    _emit(json.dumps(doc) + "\n", out)
    sys.stderr.write(json.dumps({"samples": doc["report"]["emitted"], "skipped": doc["report"]["skipped_history"]}) + "\n")


def cmd_train(cfg: dict, seed: int, out: str | None) -> None:
    if not out:
        raise CliError("train needs --out for the checkpoint")
    doc, mc, sets, emb = _load_dataset(_need(cfg, "dataset"))
    overrides = cfg.get("model", {})
    if overrides:
        mc = ModelConfig.from_dict({**mc.to_dict(), **overrides, "d_S": overrides.get("d_S", mc.d_S
                                    if mc.encoder_kind == "fixed_transferred" else None)})
    tc = pipeline.TrainConfig.from_dict({**cfg.get("train", {}), "seed": seed})
    net = VolatilityNet.init(mc, emb, seed=seed)
    res = pipeline.train(net, sets["train"], sets["validation"], tc)
    res.model.save(out)
    _emit_json({"checkpoint": out, "best_epoch": res.best_epoch, "best_val_mse": res.best_val_mse,
                "stop_reason": res.stop_reason, "history": res.history_dicts(), "n_params": net.n_params()}, None)


def cmd_predict(cfg: dict, seed: int, out: str | None) -> None:
    _, _, sets, _ = _load_dataset(_need(cfg, "dataset"))
    net = VolatilityNet.load(_need(cfg, "checkpoint"))
    s = sets[cfg.get("split", "test")]
    pred = pipeline.predict(net, s)
    lines = ["stock_id\tdate\ttarget_date\tprediction\ttarget"]
    for i in range(len(s)):
        lines.append(f"{s.stock_ids[i]}\t{s.dates[i].isoformat()}\t{s.target_dates[i].isoformat()}\t"
                     f"{pred[i]!r}\t{s.target[i]!r}")
    _emit("\n".join(lines) + "\n", out)


def cmd_evaluate(cfg: dict, seed: int, out: str | None) -> None:
    doc, _, sets, _ = _load_dataset(_need(cfg, "dataset"))
    test = sets[cfg.get("split", "test")]
    sectors = pipeline.read_universe(cfg["universe"]) if cfg.get("universe") else doc.get("sectors") or {}
    proxies = cfg.get("proxy_kinds", ["garman_klass", "parkinson"])
    forecasts = {}
    for name, path in cfg.get("checkpoints", {}).items():
        forecasts[name] = pipeline.predict(VolatilityNet.load(path), test)
    if cfg.get("garch", True):
        prices = _load_prices(cfg.get("prices", doc["prices"]))
        fit_until = dt.date.fromisoformat(doc["split"]["validation"][1])
        forecasts["garch"], _ = pipeline.garch_forecasts(prices, test, fit_until, rng_seed=seed)
    if not forecasts:
        raise CliError("nothing to evaluate: give checkpoints and/or garch")
    reports = []
    for name, f in forecasts.items():
        for kind in proxies:
            reports.extend(pipeline.evaluate_forecasts(f, test, kind, name, sectors))
    _emit(pipeline.reports_tsv(reports), out)


def cmd_gradcheck(cfg: dict, seed: int, out: str | None) -> None:
    names = cfg.get("cases")
    res = gradsuite.run(names, seed=seed)
    tol = float(cfg.get("tolerance", gradsuite.TOL))
    failed = [k for k, v in res.items() if not v < tol]
    _emit_json({"tolerance": tol, "max_rel_error": res, "failed": failed}, out)
    if failed:
        raise CliError(f"{len(failed)} gradient checks above tolerance")


def cmd_efficiency(cfg: dict, seed: int, out: str | None) -> None:
    n_days = int(cfg.get("n_days", 20000))
    n_steps = int(cfg.get("n_steps", 2000))
    sigma = float(cfg.get("sigma", 0.02))
    s = marketdata.efficiency_sample(n_days, n_steps, sigma, seed)
    base = float(np.var(s["squared_return"]))
    _emit_json({
        "n_days": n_days, "n_steps": n_steps, "sigma": sigma,
        "efficiency": {k: base / float(np.var(s[k])) for k in ("parkinson", "garman_klass")},
        "mean_over_variance": {k: float(np.mean(v)) / sigma ** 2 for k, v in s.items()},
    }, out)


def cmd_simulate_corpus(cfg: dict, seed: int, out: str | None) -> None:
    if not out:
        raise CliError("simulate-corpus needs --out <directory>")
    market = news_shock_market(NewsShockConfig.from_dict(cfg), seed)
    _emit_json({"files": market.write(out), "headlines": len(market.records),
                "shock_days": {k: int(len(v)) for k, v in market.shock_days.items()}}, None)


def cmd_experiment(cfg: dict, seed: int, out: str | None) -> None:
    seeds = cfg.get("seeds", [seed])
    mcfg = NewsShockConfig.from_dict(cfg.get("market", {}))
    model_cfg = ModelConfig.from_dict({"l_n": mcfg.max_headlines, **cfg.get("model", {}),
                                       "n_stocks": mcfg.n_stocks, "d_w": mcfg.d_w})
    tcfg = pipeline.TrainConfig.from_dict(cfg["train"]) if "train" in cfg else EXPERIMENT_TRAINING
    results = [planted_signal_run(s, mcfg, model_cfg, tcfg) for s in seeds]
    rows = summary_rows(results)
    keys = list(rows[0])
    lines = ["\t".join(keys)] + ["\t".join(str(r[k]) for k in keys) for r in rows]
    _emit("\n".join(lines) + "\n", out)
    sys.stderr.write(json.dumps({r.seed: orderings(r) for r in results}) + "\n")


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="volcast", description="Volatility forecasting toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(HANDLERS[name].__doc__ or "").split("\n")[0] or None)
        sp.add_argument("--config", help="JSON file with command options")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output path (default: stdout)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = json.loads(Path(args.config).read_text()) if args.config else {}
        if not isinstance(cfg, dict):
            raise CliError("config must be a JSON object")
        HANDLERS[args.command](cfg, args.seed, args.out)
    except Exception as exc:  # every failure becomes one structured line on stderr
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if args.verbose:
            err["traceback"] = traceback.format_exc()
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
