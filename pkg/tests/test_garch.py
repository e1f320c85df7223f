import json

import numpy as np
import pytest

from volcast import garch
from volcast.garch import (
    FitError,
    GarchError,
    GarchFit,
    GarchParams,
    StationarityError,
    filter_variance,
    forecast_multi_step,
    forecast_one_step,
    mean_loglik_and_grad,
    simulate_garch,
)

P = GarchParams(0.0, 1e-6, 0.1, 0.85)


def last_state_fit(params, eps2_T, s2_T):
    return GarchFit(params, np.array([s2_T]), np.array([np.sqrt(eps2_T)]), 0.0)


class TestParams:
    def test_unconditional_variance(self):
        assert P.unconditional_variance == pytest.approx(2e-5, rel=1e-12)

    def test_constraints(self):
        with pytest.raises(GarchError):
            GarchParams(0, 0.0, 0.1, 0.8)
        with pytest.raises(GarchError):
            GarchParams(0, 1e-6, -0.1, 0.8)
        with pytest.raises(StationarityError):
            GarchParams(0, 1e-6, 0.2, 0.8)


class TestFilter:
    def test_spot_check(self):
        r = np.zeros(25)
        r[0] = 0.02
        f = filter_variance(r, P, initial_variance=2.5e-4)
        assert f.cond_variance[1] == pytest.approx(2.535e-4, rel=1e-12)

    def test_no_arch_terms_gives_a0(self):
        r = np.random.default_rng(0).standard_normal(50) * 0.01
        f = filter_variance(r, GarchParams(0.0, 3e-5, 0.0, 0.0))
        np.testing.assert_allclose(f.cond_variance[1:], 3e-5, rtol=1e-14)

    def test_constant_returns_converge_geometrically(self):
        p = GarchParams(0.001, 1e-6, 0.1, 0.8)
        f = filter_variance(np.full(200, 0.001), p, initial_variance=1e-4)
        limit = p.a0 / (1 - p.b1)
        gaps = np.abs(f.cond_variance - limit)
        np.testing.assert_allclose(gaps[1:60] / gaps[:59], p.b1, rtol=1e-8)
        assert gaps[-1] < 1e-15

    def test_matches_python_loop(self):
        r = np.random.default_rng(1).standard_normal(100) * 0.01
        p = GarchParams(0.0005, 2e-6, 0.07, 0.9)
        f = filter_variance(r, p)
        eps = r - p.mu
        s = [float(np.mean(eps ** 2))]
        for t in range(1, len(r)):
            s.append(p.a0 + p.a1 * eps[t - 1] ** 2 + p.b1 * s[-1])
        np.testing.assert_allclose(f.cond_variance, s, rtol=1e-13)

    def test_too_short(self):
        with pytest.raises(GarchError):
            filter_variance(np.zeros(5), P)


class TestLikelihoodGradient:
    def test_matches_finite_differences(self):
        r = simulate_garch(P, 500, 3)
        eps2 = (r - r.mean()) ** 2
        theta = garch.params_to_theta(GarchParams(0, 2e-6, 0.08, 0.88))
        _, g = mean_loglik_and_grad(theta, eps2, float(eps2.mean()))
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            lp, _ = mean_loglik_and_grad(theta + e, eps2, float(eps2.mean()))
            lm, _ = mean_loglik_and_grad(theta - e, eps2, float(eps2.mean()))
            assert g[i] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-9)

    def test_theta_round_trip(self):
        back = garch.theta_to_params(garch.params_to_theta(P), 0.0)
        assert back.a0 == pytest.approx(P.a0) and back.a1 == pytest.approx(P.a1) and back.b1 == pytest.approx(P.b1)


class TestFit:
    def test_iid_returns_have_low_persistence(self):
        r = np.random.default_rng(11).standard_normal(20000) * 0.01
        f = garch.fit(r, rng_seed=0)
        assert f.params.a1 + f.params.b1 < 0.05

    def test_refit_round_trip_persistence(self):
        r = simulate_garch(GarchParams(0.0, 4e-6, 0.08, 0.88), 8000, 5)
        f1 = garch.fit(r, n_restarts=2)
        r2 = simulate_garch(f1.params, 20000, 6)
        f2 = garch.fit(r2, n_restarts=2)
        assert abs(f2.params.persistence - f1.params.persistence) <= 0.02

    def test_non_finite_rejected(self):
        r = np.zeros(30)
        r[3] = np.nan
        with pytest.raises(GarchError):
            garch.fit(r)

    def test_fit_error_carries_diagnostics(self):
        err = FitError("x", {"restarts": [1]})
        assert err.diagnostics == {"restarts": [1]}

    def test_json_round_trip(self, tmp_path):
        f = filter_variance(simulate_garch(P, 200, 1), P)
        p = tmp_path / "fit.json"
        p.write_text(f.to_json())
        back = garch.load_fit_json(p)
        assert forecast_one_step(back) == pytest.approx(forecast_one_step(f), rel=1e-15)
        assert json.loads(p.read_text())["a1"] == 0.1


class TestForecast:
    def test_one_step(self):
        assert forecast_one_step(last_state_fit(P, 4e-4, 2.5e-4)) == pytest.approx(2.535e-4, rel=1e-12)

    def test_one_step_no_arch(self):
        p = GarchParams(0.0, 5e-6, 0.0, 0.0)
        assert forecast_one_step(last_state_fit(p, 1e-3, 1e-3)) == pytest.approx(5e-6)

    def test_fixed_point(self):
        su = P.unconditional_variance
        assert forecast_one_step(last_state_fit(P, su, su)) == pytest.approx(su, rel=1e-12)

    def test_three_steps(self):
        fc = forecast_multi_step(last_state_fit(P, 4e-4, 2.5e-4), 3)
        assert fc.expected_variance[2] == pytest.approx(2.3073375e-4, rel=1e-12)
        assert fc.unconditional_variance == pytest.approx(2e-5)

    def test_converges_to_unconditional(self):
        fc = forecast_multi_step(last_state_fit(P, 4e-4, 2.5e-4), 2000)
        assert fc.expected_variance[-1] == pytest.approx(2e-5, rel=1e-12)

    def test_bad_horizon(self):
        with pytest.raises(GarchError):
            forecast_multi_step(last_state_fit(P, 1e-4, 1e-4), 0)


class TestSimulate:
    def test_deterministic(self):
        np.testing.assert_array_equal(simulate_garch(P, 100, 9), simulate_garch(P, 100, 9))

    def test_long_run_variance(self):
        r = simulate_garch(P, 100000, 2)
        assert np.var(r) == pytest.approx(P.unconditional_variance, rel=0.05)

    def test_iid_case(self):
        r = simulate_garch(GarchParams(0.0, 1e-4, 0.0, 0.0), 50000, 4)
        assert np.var(r) == pytest.approx(1e-4, rel=0.03)
        assert abs(np.corrcoef(r[1:] ** 2, r[:-1] ** 2)[0, 1]) < 0.02
