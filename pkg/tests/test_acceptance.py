"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import datetime as dt
import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from volcast import corpus, garch, gradsuite, marketdata, metrics, pipeline
from volcast.corpus import TimeCategory, TradingCalendar
from volcast.experiment import orderings, planted_signal_run
from volcast.model import ENCODER_KINDS, Batch, ModelConfig, VolatilityNet
from volcast.synthetic import NewsShockConfig, news_shock_market

DATA = Path(__file__).parent / "data"


def record(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


class TestAcceptance:
    def test_01_estimator_efficiency(self):
        t0 = time.perf_counter()
        s = marketdata.efficiency_sample(20000, 2000, 0.02, rng_seed=2024)
        secs = time.perf_counter() - t0
        base = np.var(s["squared_return"])
        pk, gk = base / np.var(s["parkinson"]), base / np.var(s["garman_klass"])
        ok = 3.7 <= pk <= 6.1 and 5.6 <= gk <= 9.2 and gk > pk and secs < 60
        record(1, "estimator efficiency", ok, f"PK {pk:.2f} in [3.7, 6.1], GK {gk:.2f} in [5.6, 9.2], {secs:.1f}s")
        assert ok

    def test_02_estimator_bias(self):
        s = marketdata.efficiency_sample(20000, 2000, 0.02, rng_seed=2024)
        ratios = {k: float(np.mean(s[k])) / 0.02 ** 2 for k in ("parkinson", "garman_klass")}
        ok = all(0.90 <= r <= 1.02 for r in ratios.values())
        record(2, "estimator bias", ok, ", ".join(f"{k} {v:.4f}" for k, v in ratios.items()) + " in [0.90, 1.02]")
        assert ok

    def test_03_garch_recovery(self):
        truth = garch.GarchParams(0.0, 1e-6, 0.1, 0.85)
        r = garch.simulate_garch(truth, 20000, 7)
        t0 = time.perf_counter()
        f = garch.fit(r)
        secs = time.perf_counter() - t0
        p = f.params
        ok = (abs(p.a1 - 0.1) <= 0.03 and abs(p.b1 - 0.85) <= 0.03 and abs(p.persistence - 0.95) <= 0.02
              and 0.5 <= p.a0 / 1e-6 <= 2 and secs < 30)
        record(3, "GARCH recovery", ok, f"a0 {p.a0:.3g} a1 {p.a1:.4f} b1 {p.b1:.4f} pers {p.persistence:.4f}, {secs:.1f}s")
        assert ok

    def test_04_forecast_identity(self):
        params = garch.GarchParams(0.0, 1e-6, 0.1, 0.85)
        fit = garch.GarchFit(params, np.array([2.5e-4]), np.array([0.02]), 0.0)
        fc = garch.forecast_multi_step(fit, 100)
        # exact rational recursion E[s_{k+1}] = a0 + (a1 + b1) E[s_k] as the oracle
        a0, pers = Fraction(params.a0), Fraction(params.a1) + Fraction(params.b1)
        e = Fraction(params.a0) + Fraction(params.a1) * Fraction(0.02) ** 2 + Fraction(params.b1) * Fraction(2.5e-4)
        worst = 0.0
        for k in range(100):
            worst = max(worst, abs(float((Fraction(fc.expected_variance[k]) - e) / e)))
            e = a0 + pers * e
        gaps = np.abs(fc.expected_variance - fc.unconditional_variance)
        su = float(a0 / (1 - pers))
        monotone = bool((np.diff(gaps) <= 0).all()) and bool((np.diff(fc.expected_variance) <= 0).all())
        ok = worst < 1e-12 and monotone and abs(fc.unconditional_variance - su) / su < 1e-12
        record(4, "forecast identity", ok, f"max rel err {worst:.2e} over horizons 1-100, monotone={monotone}")
        assert ok

    def test_05_gradient_suite(self):
        res = gradsuite.run()
        required = ["block:lstm_step", "block:bilstm", "block:encode_maxpool", "block:encode_attention",
                    "block:encode_wl_att", "block:nra", "block:zi_temporal_context", "block:price_encoder",
                    "block:rcv1_head", "block:snli_head_relu"] + [f"block:forward_{k}" for k in ENCODER_KINDS]
        missing = [k for k in required if k not in res]
        failed = [k for k, v in res.items() if not v < 1e-5]
        ok = not missing and not failed
        record(5, "gradient suite", ok, f"{len(res)} cases, max rel err {max(res.values()):.2e}, "
                                        f"failed={failed}, missing={missing}")
        assert ok

    def test_06_nra_invariance(self):
        cfg = ModelConfig(d_w=8, n=6, d_a=5, T=4, l_n=4, l_s=6, d_MN=6, d_MP=5, d_E=3, d_JR=10, n_stocks=3)
        rng = np.random.default_rng(11)
        emb = rng.standard_normal((30, 8))
        emb[0] = 0
        net = VolatilityNet.init(cfg, emb, seed=11)
        B = 6
        news = rng.integers(1, 30, size=(B, cfg.T, cfg.l_n, cfg.l_s))
        lengths = rng.integers(1, cfg.l_s + 1, size=(B, cfg.T, cfg.l_n))
        news[np.arange(cfg.l_s) >= lengths[..., None]] = 0
        news[0, 2] = 0
        news[1, :, 3] = 0
        batch = Batch(rng.standard_normal((B, cfg.T, 4)) * 0.02, news, np.eye(3)[rng.integers(0, 3, B)])
        base = net.predict(batch)
        perm_err = 0.0
        for trial in range(5):
            permuted = news.copy()
            for b in range(B):
                for t in range(cfg.T):
                    permuted[b, t] = news[b, t][rng.permutation(cfg.l_n)]
            perm_err = max(perm_err, np.abs(net.predict(Batch(batch.price, permuted, batch.stock)) - base).max())
        wide = ModelConfig(**{**cfg.to_dict(), "l_n": cfg.l_n + 3, "l_s": cfg.l_s + 4})
        padded = np.zeros((B, cfg.T, cfg.l_n + 3, cfg.l_s + 4), dtype=news.dtype)
        padded[:, :, :cfg.l_n, :cfg.l_s] = news
        pad_err = np.abs(VolatilityNet(wide, net.params, emb).predict(Batch(batch.price, padded, batch.stock)) - base).max()
        ok = perm_err < 1e-12 and pad_err < 1e-12
        record(6, "NRA permutation/padding invariance", ok, f"permutation {perm_err:.1e}, padding {pad_err:.1e}")
        assert ok

    def test_07_mincer_zarnowitz(self):
        perfect = metrics.mincer_zarnowitz([0.1, 0.3, 0.2, 0.5], [0.1, 0.3, 0.2, 0.5])
        rev = metrics.mincer_zarnowitz([3, 2, 1], [1, 2, 3])
        rng = np.random.default_rng(5)
        f = rng.standard_normal(100000)
        noisy = metrics.mincer_zarnowitz(f, f + rng.standard_normal(100000))
        ok = (abs(perfect.r2 - 1) <= 1e-12 and abs(rev.b + 1) < 1e-12 and abs(rev.a - 4) < 1e-12
              and abs(rev.r2 - 1) < 1e-12 and abs(noisy.r2 - 0.5) <= 0.02)
        record(7, "Mincer-Zarnowitz fixtures", ok,
               f"perfect R2 {perfect.r2:.15f}, reversed b {rev.b:.3f} a {rev.a:.3f} R2 {rev.r2:.3f}, noise R2 {noisy.r2:.4f}")
        assert ok

    def test_08_corpus_golden(self):
        cal = TradingCalendar()
        ny = lambda s: corpus.from_eastern(dt.datetime.fromisoformat(s))  # noqa: E731
        c1 = corpus.categorize(corpus.to_eastern(ny("2007-04-17 08:54:27")), cal)
        c2 = corpus.categorize(corpus.to_eastern(ny("2016-09-22 15:32:13")), cal)
        recs = [corpus.HeadlineRecord("X", ny("2016-09-20 16:05:00"), "tuesday evening"),
                corpus.HeadlineRecord("Y", ny("2016-09-23 17:00:00"), "friday evening")]
        aligned = corpus.align(recs, cal)
        d1, d2 = aligned["X"][0].trading_date, aligned["Y"][0].trading_date
        records, _ = corpus.read_headlines_jsonl(DATA / "headlines_200.jsonl")
        hist = corpus.category_histogram(records, TradingCalendar.from_file(DATA / "holidays_200.txt"))
        golden = (json.dumps(hist, indent=2) + "\n").encode() == (DATA / "histogram_200.json").read_bytes()
        ok = (c1 is TimeCategory.BEFORE_MARKET and c2 is TimeCategory.DURING_MARKET
              and d1 == dt.date(2016, 9, 21) and d2 == dt.date(2016, 9, 26) and golden and len(records) == 200)
        record(8, "corpus golden tests", ok, f"{c1.value}, {c2.value}, Tue 16:05 -> {d1}, Fri 17:00 -> {d2}, "
                                             f"histogram byte-identical={golden}")
        assert ok

    def test_09_overfit(self):
        def run_once():
            market = news_shock_market(NewsShockConfig(n_stocks=2, n_days=40, d_w=16), seed=9)
            aligned = corpus.align(market.records, market.calendar, {s: p.dates for s, p in market.prices.items()})
            vocab = corpus.vocab_from_vectors(market.embeddings, 16)
            mc = ModelConfig(n_stocks=2)
            split = pipeline.SplitSpec.by_fraction(market.dates, 0.9, 0.05)
            samples, _ = pipeline.build_samples(market.prices, aligned, vocab, mc, split)
            train = pipeline.SampleSet.from_samples(samples["train"][:32], mc)
            net = VolatilityNet.init(mc, vocab.matrix, seed=9)
            cfg = pipeline.TrainConfig(batch_size=32, max_epochs=500, patience=500, lr=3e-3, seed=9)
            res = pipeline.train(net, train, train, cfg)
            return len(train), [h.train_mse for h in res.history]

        t0 = time.perf_counter()
        n, hist = run_once()
        _, hist2 = run_once()
        secs = time.perf_counter() - t0
        below = next((i for i, v in enumerate(hist) if v < 0.1 * hist[0]), None)
        ok = n == 32 and below is not None and below <= 500 and hist == hist2
        record(9, "overfit sanity", ok, f"{n} samples, epoch-0 MSE {hist[0]:.3e}, below 10% at epoch {below}, "
                                        f"deterministic={hist == hist2}, {secs:.0f}s for two runs")
        assert ok

    def test_10_planted_signal(self):
        t0 = time.perf_counter()
        counts = {"full<no_nra": 0, "no_nra<price_only": 0, "full_r2>garch_r2": 0}
        rows = []
        for seed in range(5):
            res = planted_signal_run(seed)
            for k, v in orderings(res).items():
                counts[k] += bool(v)
            rows.append({k: round(v[0].mse * 1e5, 3) for k, v in res.reports.items()})
        secs = time.perf_counter() - t0
        ok = all(c >= 4 for c in counts.values()) and secs < 15 * 60
        record(10, "planted-signal ordering", ok, f"{counts} of 5 seeds, {secs:.0f}s; test MSE x1e5 per seed {rows}")
        assert ok
