import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volcast.metrics import DegenerateRegressorError, EvalReport, evaluate, mae, mincer_zarnowitz, mse


class TestErrors:
    def test_mse(self):
        assert mse([1, 2], [1, 2]) == 0
        assert mse([3, 2, 1], [1, 2, 3]) == pytest.approx(8 / 3)
        assert mse([0.02], [0.01]) == pytest.approx(1e-4)

    def test_mae(self):
        assert mae([1, 2], [1, 2]) == 0
        assert mae([3, 2, 1], [1, 2, 3]) == pytest.approx(4 / 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mse([1, 2], [1])


class TestMincerZarnowitz:
    def test_perfect(self):
        mz = mincer_zarnowitz([0.1, 0.3, 0.2, 0.5], [0.1, 0.3, 0.2, 0.5])
        assert mz.a == pytest.approx(0, abs=1e-15)
        assert mz.b == pytest.approx(1, abs=1e-12)
        assert mz.r2 == pytest.approx(1, abs=1e-12)

    def test_reversed_fixture(self):
        mz = mincer_zarnowitz([3, 2, 1], [1, 2, 3])
        assert mz.b == pytest.approx(-1)
        assert mz.a == pytest.approx(4)
        assert mz.r2 == pytest.approx(1)

    def test_constant_forecast(self):
        with pytest.raises(DegenerateRegressorError):
            mincer_zarnowitz([1, 1, 1], [1, 2, 3])

    def test_equal_noise(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal(100000)
        mz = mincer_zarnowitz(f, f + rng.standard_normal(100000))
        assert mz.r2 == pytest.approx(0.5, abs=0.02)

    def test_forecast_centered_variant_differs(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal(100000)
        mz = mincer_zarnowitz(f, f + rng.standard_normal(100000))
        # SSE is about the noise variance, as is the forecast spread, so this variant sits near 0
        assert abs(mz.r2_forecast_centered) < 0.05

    @given(arrays(np.float64, 20, elements=st.floats(-1, 1)), arrays(np.float64, 20, elements=st.floats(-1, 1)))
    def test_r2_is_squared_correlation(self, f, p):
        if np.ptp(f) < 1e-3 or np.ptp(p) < 1e-3:
            return
        mz = mincer_zarnowitz(f, p)
        assert mz.r2 == pytest.approx(np.corrcoef(f, p)[0, 1] ** 2, abs=1e-9)
        assert -1e-12 <= mz.r2 <= 1 + 1e-12


class TestReport:
    def test_evaluate_identity(self):
        p = np.array([0.01, 0.02, 0.015, 0.03])
        r = evaluate(p, p, "garman_klass", "oracle")
        assert r.mse == 0 and r.mae == 0 and r.r2 == pytest.approx(1)
        assert json.loads(r.to_json())["model"] == "oracle"

    def test_tsv(self):
        r = evaluate([1.0, 2.0, 4.0], [1.0, 2.5, 3.0], "parkinson", "m", "tech")
        row = r.tsv_row().split("\t")
        assert len(row) == len(EvalReport.TSV_FIELDS)
        assert row[:3] == ["m", "parkinson", "tech"]
