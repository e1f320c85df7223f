"""GARCH(1,1): quasi-likelihood fitting, variance filtering, forecasting, simulation.

Fitting works on unconstrained coordinates theta = (t0, t1, t2) with

    a0 = exp(t0),  p = logistic(t1),  q = logistic(t2),
    a1 = p * q,    b1 = p * (1 - q),

so every iterate satisfies a0 > 0, a1, b1 >= 0 and a1 + b1 < 1.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

log = logging.getLogger(__name__)

MIN_OBS = 20
LOG_2PI = math.log(2.0 * math.pi)


class GarchError(ValueError):
    pass


class StationarityError(GarchError):
    pass


class FitError(GarchError):
    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class GarchParams:
    mu: float
    a0: float
    a1: float
    b1: float

    def __post_init__(self):
        if not self.a0 > 0:
            raise GarchError(f"a0 must be > 0, got {self.a0}")
        if self.a1 < 0 or self.b1 < 0:
            raise GarchError(f"a1, b1 must be >= 0, got {self.a1}, {self.b1}")
        if not self.a1 + self.b1 < 1:
            raise StationarityError(f"a1 + b1 = {self.a1 + self.b1} is not < 1")

    @property
    def persistence(self) -> float:
        return self.a1 + self.b1

    @property
    def unconditional_variance(self) -> float:
        return self.a0 / (1.0 - self.a1 - self.b1)


@dataclass
class GarchFit:
    params: GarchParams
    cond_variance: np.ndarray
    residuals: np.ndarray
    log_likelihood: float
    converged: bool = True
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            **asdict(self.params),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": int(len(self.residuals)),
            "last_residual": float(self.residuals[-1]),
            "last_variance": float(self.cond_variance[-1]),
            "unconditional_variance": self.params.unconditional_variance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class GarchForecast:
    horizon: int
    expected_variance: np.ndarray
    unconditional_variance: float


def _validate_returns(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1:
        raise GarchError("returns must be one-dimensional")
    if len(r) < MIN_OBS:
        raise GarchError(f"need at least {MIN_OBS} returns, got {len(r)}")
    if not np.isfinite(r).all():
        raise GarchError("returns contain non-finite values")
    return r


def _recursion(eps2: np.ndarray, a0: float, a1: float, b1: float, s0: float) -> np.ndarray:
    # s_t = a0 + a1 * eps2_{t-1} + b1 * s_{t-1}, run as a first-order IIR filter
    s = np.empty_like(eps2)
    s[0] = s0
    s[1:] = lfilter([1.0], [1.0, -b1], a0 + a1 * eps2[:-1], zi=[b1 * s0])[0]
    return s


def _loglik(s: np.ndarray, eps2: np.ndarray) -> float:
    return float(-0.5 * np.sum(LOG_2PI + np.log(s) + eps2 / s))


def filter_variance(returns, params: GarchParams, initial_variance: float | None = None) -> GarchFit:
    """Conditional variances for ``returns`` under fixed ``params``.

    The first variance is the sample variance of the demeaned returns unless
    ``initial_variance`` is given.
    """
    r = _validate_returns(returns)
    eps = r - params.mu
    eps2 = eps * eps
    s0 = float(np.mean(eps2)) if initial_variance is None else float(initial_variance)
    s = _recursion(eps2, params.a0, params.a1, params.b1, s0)
    return GarchFit(params, s, eps, _loglik(s, eps2))


def theta_to_params(theta, mu: float) -> GarchParams:
    t0, t1, t2 = theta
    p = _logistic(t1)
    q = _logistic(t2)
    return GarchParams(mu, math.exp(t0), p * q, p * (1.0 - q))


def params_to_theta(params: GarchParams) -> np.ndarray:
    p = params.a1 + params.b1
    q = params.a1 / p if p > 0 else 0.5
    return np.array([math.log(params.a0), _logit(p), _logit(q)])


def _logistic(x: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * x))


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1 - 1e-12)
    return math.log(p / (1.0 - p))


def mean_loglik_and_grad(theta: np.ndarray, eps2: np.ndarray, s0: float) -> tuple[float, np.ndarray]:
    """Average log-likelihood per observation and its gradient in theta."""
    t0, t1, t2 = theta
    a0 = math.exp(t0)
    p, q = _logistic(t1), _logistic(t2)
    a1, b1 = p * q, p * (1.0 - q)
    s = _recursion(eps2, a0, a1, b1, s0)
    n = len(eps2)
    ll = _loglik(s, eps2) / n
    # sensitivities of s_t obey the same filter with different drives; s_0 is fixed
    den = [1.0, -b1]
    ds = np.zeros((3, n))
    ds[0, 1:] = lfilter([1.0], den, np.ones(n - 1))
    ds[1, 1:] = lfilter([1.0], den, eps2[:-1])
    ds[2, 1:] = lfilter([1.0], den, s[:-1])
    dll_ds = -0.5 * (1.0 / s - eps2 / (s * s))
    g_a0, g_a1, g_b1 = ds @ dll_ds / n
    dp, dq = p * (1.0 - p), q * (1.0 - q)
    grad = np.array([
        g_a0 * a0,
        g_a1 * q * dp + g_b1 * (1.0 - q) * dp,
        g_a1 * p * dq - g_b1 * p * dq,
    ])
    return ll, grad


def _adam_maximize(theta, eps2, s0, max_iter, tol, lr=0.05):
    m = np.zeros(3)
    v = np.zeros(3)
    b1_, b2_ = 0.9, 0.999
    ll, g = mean_loglik_and_grad(theta, eps2, s0)
    best = (ll, theta.copy())
    converged = False
    it = 0
    small = 0
    for it in range(1, max_iter + 1):
        m = b1_ * m + (1 - b1_) * g
        v = b2_ * v + (1 - b2_) * g * g
        step = lr / math.sqrt(1.0 + it / 50.0)
        theta = theta + step * (m / (1 - b1_ ** it)) / (np.sqrt(v / (1 - b2_ ** it)) + 1e-12)
        new_ll, g = mean_loglik_and_grad(theta, eps2, s0)
        if not math.isfinite(new_ll):
            break
        improvement = (new_ll - best[0]) / max(abs(best[0]), 1e-300)
        if new_ll > best[0]:
            best = (new_ll, theta.copy())
        # stop once the best value has stalled for a run of iterations
        small = small + 1 if improvement < tol else 0
        if small >= 20:
            converged = True
            break
    return best[1], best[0], converged, it


def _polish(theta, eps2, s0, max_iter):
    """Quasi-Newton refinement; Adam alone creeps along the flat directions near a1 = 0 or b1 = 0."""
    def neg(t):
        ll, g = mean_loglik_and_grad(t, eps2, s0)
        if not math.isfinite(ll):
            return math.inf, np.zeros(3)
        return -ll, -g

    res = minimize(neg, theta, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-10})
    return res.x, -float(res.fun), bool(res.success), int(res.nit)


def fit(returns, n_restarts: int = 5, max_iter: int = 500, tol: float = 1e-9,
        rng_seed: int = 0) -> GarchFit:
    """Gaussian quasi-maximum-likelihood fit; mu is the sample mean.

    Starts once from a moderate-persistence guess and ``n_restarts`` more
    times from random points. Each start runs up to ``max_iter`` Adam
    iterations, then an L-BFGS refinement; the best likelihood wins.
    """
    r = _validate_returns(returns)
    mu = float(np.mean(r))
    eps = r - mu
    eps2 = eps * eps
    s0 = float(np.mean(eps2))
    rng = np.random.default_rng(rng_seed)
    starts = [np.array([math.log(s0 * 0.1), _logit(0.9), _logit(0.1)])]
    for _ in range(n_restarts):
        p = rng.uniform(0.3, 0.98)
        q = rng.uniform(0.02, 0.6)
        starts.append(np.array([math.log(s0 * (1 - p)), _logit(p), _logit(q)]))
    best = None
    diagnostics = []
    for x0 in starts:
        theta, ll, _, its = _adam_maximize(x0, eps2, s0, max_iter, tol)
        if math.isfinite(ll):
            t2, ll2, conv, its2 = _polish(theta, eps2, s0, max_iter)
            if math.isfinite(ll2) and ll2 >= ll:
                theta, ll = t2, ll2
            its += its2
        else:
            conv = False
        diagnostics.append({"start": x0.tolist(), "mean_loglik": ll, "converged": conv, "iterations": its})
        if math.isfinite(ll) and (best is None or ll > best[1]):
            best = (theta, ll, conv, its)
    if best is None:
        raise FitError("log-likelihood not finite from any start", {"restarts": diagnostics})
    theta, _, conv, its = best
    out = filter_variance(r, theta_to_params(theta, mu))
    out.converged = conv
    out.iterations = its
    log.debug("garch fit %s ll=%.6f converged=%s", out.params, out.log_likelihood, conv)
    return out


def forecast_one_step(fit: GarchFit) -> float:
    """Expected variance for the day after the last observation."""
    p = fit.params
    return p.a0 + p.a1 * float(fit.residuals[-1]) ** 2 + p.b1 * float(fit.cond_variance[-1])


def one_step_path(fit: GarchFit) -> np.ndarray:
    """Variance forecasts made after each observation, for the following day."""
    p = fit.params
    return p.a0 + p.a1 * fit.residuals ** 2 + p.b1 * fit.cond_variance


def forecast_multi_step(fit: GarchFit, horizon: int) -> GarchForecast:
    if horizon < 1:
        raise GarchError("horizon must be >= 1")
    p = fit.params
    pers = p.a1 + p.b1
    if pers >= 1:
        raise StationarityError(f"a1 + b1 = {pers} is not < 1")
    su = p.a0 / (1.0 - pers)
    first = forecast_one_step(fit)
    k = np.arange(horizon)
    return GarchForecast(horizon, su + pers ** k * (first - su), su)


def simulate_garch(params: GarchParams, n: int, rng_seed: int) -> np.ndarray:
    """Returns mu + sigma_t z_t with Gaussian z_t, starting from the unconditional variance."""
    if n < 1:
        raise GarchError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal(n)
    r = np.empty(n)
    s = params.unconditional_variance
    a0, a1, b1 = params.a0, params.a1, params.b1
    for t in range(n):
        e = math.sqrt(s) * z[t]
        r[t] = params.mu + e
        s = a0 + a1 * e * e + b1 * s
    return r


def load_fit_json(path: str | Path) -> GarchFit:
    """Rebuild a fit from :meth:`GarchFit.to_json` output (last state only)."""
    d = json.loads(Path(path).read_text())
    params = GarchParams(d["mu"], d["a0"], d["a1"], d["b1"])
    return GarchFit(params, np.array([d["last_variance"]]), np.array([d["last_residual"]]),
                    d.get("log_likelihood", float("nan")), d.get("converged", True), d.get("iterations", 0))
