"""Forecast evaluation: MSE, MAE and the Mincer-Zarnowitz regression.

All inputs are volatilities (standard deviations), not variances.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


class DegenerateRegressorError(ValueError):
    """The forecast series is constant, so the regression slope is undefined."""


def _pair(forecast, proxy) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(forecast, dtype=np.float64).reshape(-1)
    p = np.asarray(proxy, dtype=np.float64).reshape(-1)
    if f.shape != p.shape:
        raise ValueError(f"length mismatch: {f.size} forecasts vs {p.size} proxies")
    if f.size == 0:
        raise ValueError("empty input")
    return f, p


def mse(forecast, proxy) -> float:
    f, p = _pair(forecast, proxy)
    return float(np.mean((f - p) ** 2))


def mae(forecast, proxy) -> float:
    f, p = _pair(forecast, proxy)
    return float(np.mean(np.abs(f - p)))


@dataclass
class MincerZarnowitz:
    a: float
    b: float
    r2: float
    r2_forecast_centered: float


def mincer_zarnowitz(forecast, proxy) -> MincerZarnowitz:
    """OLS of ``proxy = a + b * forecast + e``.

    ``r2`` is 1 - SSE / sum((proxy - mean(proxy))^2), which equals the
    squared correlation of forecast and proxy. ``r2_forecast_centered``
    divides SSE by the forecast's own sum of squared deviations instead;
    the two agree only when forecast and proxy have the same spread.
    """
    f, p = _pair(forecast, proxy)
    if f.size < 3:
        raise ValueError("need at least 3 pairs")
    fc = f - f.mean()
    sxx = float(fc @ fc)
    if sxx == 0.0 or sxx <= 1e-28 * max(1.0, float(f @ f)):
        raise DegenerateRegressorError("forecast is constant")
    pc = p - p.mean()
    b = float(fc @ pc) / sxx
    a = float(p.mean() - b * f.mean())
    e = p - a - b * f
    sse = float(e @ e)
    syy = float(pc @ pc)
    r2 = 1.0 - sse / syy if syy > 0 else 1.0
    return MincerZarnowitz(a, b, r2, 1.0 - sse / sxx)


@dataclass
class EvalReport:
    mse: float
    mae: float
    r2: float
    mz_intercept: float
    mz_slope: float
    n: int
    proxy_kind: str
    r2_forecast_centered: float = float("nan")
    model: str = ""
    sector: str = "all"

    TSV_FIELDS = ("model", "proxy_kind", "sector", "n", "mse", "mae", "r2", "mz_intercept", "mz_slope")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def tsv_row(self) -> str:
        return "\t".join(_fmt(getattr(self, k)) for k in self.TSV_FIELDS)

    @classmethod
    def tsv_header(cls) -> str:
        return "\t".join(cls.TSV_FIELDS)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate(forecast, proxy, proxy_kind: str, model: str = "", sector: str = "all") -> EvalReport:
    f, p = _pair(forecast, proxy)
    if f.size < 2:
        raise ValueError("need at least 2 samples")
    mz = mincer_zarnowitz(f, p)
    return EvalReport(
        mse=mse(f, p), mae=mae(f, p), r2=mz.r2, mz_intercept=mz.a, mz_slope=mz.b,
        n=int(f.size), proxy_kind=proxy_kind, r2_forecast_centered=mz.r2_forecast_centered,
        model=model, sector=sector,
    )
