import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volcast import autodiff as ad
from volcast import gradsuite
from volcast.autodiff import AdamState, ShapeError, Tensor, adam_step, backward, gradcheck
from volcast.autodiff import checkpoint

OP_CASES = sorted(k for k in gradsuite.cases() if k.startswith("op:"))


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestForward:
    def test_softmax_constant(self):
        out = ad.softmax(Tensor(np.full(5, 2.7))).data
        np.testing.assert_allclose(out, 0.2, rtol=1e-15)

    def test_relu(self):
        np.testing.assert_array_equal(ad.relu(Tensor([-2.0, 0.5, 3.0])).data, [0.0, 0.5, 3.0])

    def test_masked_softmax_zeroes_masked(self):
        out = ad.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
        assert out[0, 1] == 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-15)

    @given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
    def test_softmax_is_distribution(self, x):
        out = ad.softmax(Tensor(x)).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        zx, U = rng.standard_normal((2, 5, 8)), rng.standard_normal((2, 8))
        a = ad.lstm_sequence(Tensor(zx), Tensor(U)).data
        b = ad.lstm_sequence(Tensor(zx), Tensor(U)).data
        assert a.tobytes() == b.tobytes()


class TestBackward:
    def test_max_routes_to_argmax(self):
        x = leaf([3.0, 1.0, 2.0])
        backward(ad.sum(ad.max_over_axis(ad.reshape(x, (1, 3)), axis=1)))
        np.testing.assert_array_equal(x.grad, [1, 0, 0])

    @pytest.mark.parametrize("reverse", [False, True])
    def test_lstm_packed_rows_match_masked_rows(self, reverse):
        # sorted lengths take the packed route, the shuffled copy the general one
        rng = np.random.default_rng(3)
        lengths = np.array([6, 5, 5, 3, 1])
        mask = np.arange(6) < lengths[:, None]
        zx, U, G = rng.standard_normal((5, 6, 12)), rng.standard_normal((3, 12)) * 0.5, rng.standard_normal((5, 6, 3))
        perm = np.array([3, 0, 4, 2, 1])
        out = {}
        for name, rows in (("packed", np.arange(5)), ("general", perm)):
            z, u = leaf(zx[rows]), leaf(U)
            backward(ad.sum(ad.mul(ad.lstm_sequence(z, u, mask[rows], reverse=reverse), Tensor(G[rows]))))
            inv = np.argsort(rows)
            out[name] = (ad.lstm_sequence(Tensor(zx[rows]), Tensor(U), mask[rows], reverse=reverse).data[inv],
                         z.grad[inv], u.grad)
        for a, b in zip(out["packed"], out["general"]):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_max_ties_lowest_index(self):
        x = leaf([[2.0, 2.0, 1.0]])
        backward(ad.sum(ad.max_over_axis(x, axis=1)))
        np.testing.assert_array_equal(x.grad, [[1, 0, 0]])

    def test_linear(self):
        xv = np.array([1.5, -2.0, 0.25])
        w = leaf([0.1, 0.2, 0.3])
        backward(ad.sum(ad.mul(w, Tensor(xv))))
        np.testing.assert_array_equal(w.grad, xv)

    def test_reuse_sums_gradients(self):
        x = leaf([2.0])
        backward(ad.sum(ad.add(ad.mul(x, x), x)))
        assert x.grad[0] == pytest.approx(5.0)

    def test_accumulates_until_zeroed(self):
        x = leaf([1.0, 2.0])
        backward(ad.sum(x))
        backward(ad.sum(x))
        np.testing.assert_array_equal(x.grad, [2, 2])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            backward(leaf([1.0, 2.0]))

    def test_long_chain_does_not_recurse(self):
        x = leaf([1.0])
        y = x
        for _ in range(5000):
            y = ad.scale(y, 1.0)
        backward(ad.sum(y))
        assert x.grad[0] == 1.0


class TestShapeErrors:
    def test_names_op_and_shapes(self):
        with pytest.raises(ShapeError) as ei:
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert ei.value.op == "matmul"
        assert ei.value.shapes == ((2, 3), (4, 5))
        assert "(2, 3)" in str(ei.value)

    def test_no_implicit_broadcast(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_lstm_shape(self):
        with pytest.raises(ShapeError):
            ad.lstm_sequence(Tensor(np.zeros((1, 2, 7))), Tensor(np.zeros((2, 8))))


class TestLosses:
    def test_mse_zero(self):
        x = np.array([0.1, 0.2])
        assert ad.mse_loss(Tensor(x), x).item() == 0.0

    def test_multilabel_perfect(self):
        y = np.array([[1.0, 0.0, 1.0]])
        assert ad.multilabel_logloss(Tensor(y), y).item() == pytest.approx(0.0, abs=1e-6)

    def test_categorical_uniform(self):
        pred = Tensor(np.full((1, 3), 1 / 3))
        assert ad.categorical_logloss(pred, np.array([[0.0, 1.0, 0.0]])).item() == pytest.approx(math.log(3), rel=1e-12)

    def test_softmax_categorical_gradcheck(self):
        rng = np.random.default_rng(3)
        y = np.eye(4)[[1, 3]]
        x = leaf(rng.standard_normal((2, 4)))
        assert gradcheck(lambda a: ad.categorical_logloss(ad.softmax(a), y), [x]) < 1e-6


class TestGradcheck:
    def test_quadratic(self):
        x = leaf(np.random.default_rng(0).standard_normal(6))
        assert gradcheck(lambda a: ad.sum(ad.mul(a, a)), [x]) < 1e-9

    def test_detects_wrong_gradient(self):
        x = leaf([0.3, -0.7])
        bad = lambda a: ad.ops._make(a.data ** 2, (a,), lambda g: (g * 3.0,), "bad")  # noqa: E731
        assert gradcheck(lambda a: ad.sum(bad(a)), [x]) > 0.1

    @pytest.mark.parametrize("name", OP_CASES)
    def test_op(self, name):
        err = gradsuite.run([name])[name]
        assert err < gradsuite.TOL


class TestAdam:
    def test_first_step(self):
        p = {"w": np.array([1.0, -1.0, 0.5])}
        g = np.array([0.3, -2.0, 1e-3])
        adam_step(p, {"w": g}, AdamState(lr=0.01))
        expected = np.array([1.0, -1.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p["w"], expected, rtol=1e-12)

    def test_zero_gradient(self):
        p = {"w": np.array([1.0, 2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_constant_gradient_step_bounded(self):
        p = {"w": np.zeros(2)}
        st_ = AdamState(lr=0.01)
        prev = p["w"].copy()
        for _ in range(200):
            adam_step(p, {"w": np.array([5.0, -0.01])}, st_)
            step = p["w"] - prev
            prev = p["w"].copy()
            np.testing.assert_allclose(np.abs(step), 0.01, rtol=1e-5)

    def test_updates_tensors_in_place(self):
        t = leaf([1.0])
        adam_step({"t": t}, {"t": np.array([1.0])}, AdamState(lr=0.1))
        assert t.data[0] == pytest.approx(0.9)


class TestCheckpoint:
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
    @settings(max_examples=30)
    def test_round_trip_exact(self, arr):
        back = checkpoint.from_manifest(checkpoint.to_manifest({"a": arr, "b": Tensor(arr[:1])}))
        assert back["a"].tobytes() == arr.tobytes()
        assert back["b"].shape == arr[:1].shape

    def test_save_load(self, tmp_path):
        p = tmp_path / "c.json"
        checkpoint.save({"x": np.arange(6.0).reshape(2, 3)}, p, {"note": "hi"})
        t, doc = checkpoint.load(p)
        np.testing.assert_array_equal(t["x"], np.arange(6.0).reshape(2, 3))
        assert doc["note"] == "hi"

    def test_rejects_bad_manifest(self):
        with pytest.raises(ValueError):
            checkpoint.from_manifest({"format": "other"})
        doc = checkpoint.to_manifest({"x": np.zeros(3)})
        doc["tensors"]["x"]["shape"] = [4]
        with pytest.raises(ValueError):
            checkpoint.from_manifest(doc)
