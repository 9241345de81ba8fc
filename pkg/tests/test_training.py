import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poperm.training import (
    NonFiniteError,
    ParamStore,
    TrainConfig,
    adam_step,
    finite_diff_check,
    mse_loss,
    xavier_init,
)


def quadratic_store(rng):
    store = ParamStore()
    store.add("a", rng.normal(size=(3, 2)))
    store.add("b", rng.normal(size=4))
    return store


def half_norm(store):
    loss = sum(0.5 * float((v * v).sum()) for v in store.params.values())
    return loss, {k: v.copy() for k, v in store.params.items()}


class TestParamStore:
    def test_duplicate_and_reserved(self):
        s = ParamStore()
        s.add("w", np.zeros(2))
        with pytest.raises(KeyError):
            s.add("w", np.zeros(2))
        for bad in ("w.m", "x.v", "step"):
            with pytest.raises(ValueError):
                s.add(bad, np.zeros(1))

    def test_copy_is_deep(self, rng):
        s = quadratic_store(rng)
        c = s.copy()
        assert c.equals(s)
        c.params["a"][0, 0] += 1.0
        assert not c.equals(s)


class TestXavier:
    def test_single_entry_bound(self):
        w = xavier_init((1, 1), 0)
        assert abs(w[0, 0]) <= math.sqrt(3)

    def test_deterministic(self):
        np.testing.assert_array_equal(xavier_init((5, 3), 7), xavier_init((5, 3), 7))
        assert not np.array_equal(xavier_init((5, 3), 7), xavier_init((5, 3), 8))

    def test_variance(self):
        samples = np.concatenate([xavier_init((16, 2), s).ravel() for s in range(10)])
        want = 2.0 / (16 + 2)
        assert abs(samples.var() - want) <= 0.3 * want

    def test_empty_shape(self):
        with pytest.raises(ValueError):
            xavier_init((0, 3), 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
    def test_within_bound(self, out, inp, seed):
        w = xavier_init((out, inp), seed)
        assert np.all(np.abs(w) <= math.sqrt(6 / (out + inp)))


class TestAdam:
    def test_zero_gradient_from_fresh_moments(self, rng):
        s = quadratic_store(rng)
        before = s.copy()
        adam_step(s, {"a": np.zeros((3, 2)), "b": np.zeros(4)}, TrainConfig())
        for name in ("a", "b"):
            np.testing.assert_array_equal(s[name], before[name])
        assert s.step == 1

    def test_zero_gradient_decays_moments(self, rng):
        s = quadratic_store(rng)
        s.m["a"][...] = 1.0
        s.v["a"][...] = 2.0
        adam_step(s, {"a": np.zeros((3, 2))}, TrainConfig())
        np.testing.assert_allclose(s.m["a"], 0.9)
        np.testing.assert_allclose(s.v["a"], 2.0 * 0.999)

    def test_constant_gradient_step_is_lr(self):
        s = ParamStore()
        s.add("w", np.array(0.0))
        cfg = TrainConfig(lr=0.01)
        prev = 0.0
        for _ in range(50):
            adam_step(s, {"w": np.array(3.0)}, cfg)
            step = float(s["w"]) - prev
            prev = float(s["w"])
            assert step < 0
            assert abs(step) == pytest.approx(0.01, rel=1e-6)

    def test_matches_reference_formula(self, rng):
        s = ParamStore()
        s.add("w", rng.normal(size=3))
        cfg = TrainConfig(lr=0.05)
        w, m, v = s["w"].copy(), np.zeros(3), np.zeros(3)
        for t in range(1, 6):
            g = rng.normal(size=3)
            adam_step(s, {"w": g}, cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(s["w"], w, rtol=1e-14)

    def test_pure(self, rng):
        a = quadratic_store(rng)
        b = a.copy()
        g = {"a": np.ones((3, 2)), "b": -np.ones(4)}
        adam_step(a, g, TrainConfig())
        adam_step(b, g, TrainConfig())
        assert a.equals(b)

    def test_errors(self, rng):
        s = quadratic_store(rng)
        with pytest.raises(KeyError):
            adam_step(s, {"zzz": np.zeros(1)}, TrainConfig())
        with pytest.raises(ValueError):
            adam_step(s, {"b": np.zeros(3)}, TrainConfig())
        with pytest.raises(NonFiniteError, match="'b'"):
            adam_step(s, {"b": np.array([0.0, np.nan, 0.0, 0.0])}, TrainConfig())
        assert s.step == 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_finite_stays_finite(self, w, g):
        s = ParamStore()
        s.add("w", np.array(w))
        adam_step(s, {"w": np.array(g)}, TrainConfig())
        assert np.isfinite(s["w"])


class TestMse:
    def test_equal(self):
        loss, dY = mse_loss(np.ones((2, 3)), np.ones((2, 3)))
        assert loss == 0 and np.all(dY == 0)

    def test_all_ones_difference(self):
        loss, dY = mse_loss(np.ones((2, 3)), np.zeros((2, 3)))
        assert loss == 1.0
        np.testing.assert_allclose(dY, 1 / 3)

    def test_matches_fd(self, rng):
        Y, T = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        _, dY = mse_loss(Y, T)
        num = np.zeros_like(Y)
        for idx in np.ndindex(Y.shape):
            e = np.zeros_like(Y)
            e[idx] = 1e-6
            num[idx] = (mse_loss(Y + e, T)[0] - mse_loss(Y - e, T)[0]) / 2e-6
        np.testing.assert_allclose(dY, num, rtol=1e-6, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones(3), np.ones(4))


class TestFiniteDiffCheck:
    def test_quadratic_exact(self, rng):
        report = finite_diff_check(half_norm, quadratic_store(rng))
        assert report.passed and report.max_rel_error <= 1e-8

    def test_wrong_sign_names_offender(self, rng):
        def loss_fn(store):
            loss, grads = half_norm(store)
            grads["b"] = -grads["b"]
            return loss, grads

        report = finite_diff_check(loss_fn, quadratic_store(rng))
        assert not report.passed and report.worst_name == "b"

    def test_nondeterminism_detected(self, rng):
        noise = np.random.default_rng(0)

        def loss_fn(store):
            loss, grads = half_norm(store)
            return loss + noise.normal() * 1e-3, grads

        report = finite_diff_check(loss_fn, quadratic_store(rng))
        assert not report.passed and not report.deterministic

    def test_store_restored(self, rng):
        s = quadratic_store(rng)
        before = s.copy()
        finite_diff_check(half_norm, s)
        assert s.equals(before)

    def test_subsamples_large_tensors(self):
        s = ParamStore()
        s.add("big", np.ones(1000))
        calls = []

        def loss_fn(store):
            calls.append(1)
            return half_norm(store)

        finite_diff_check(loss_fn, s, max_coords=50)
        assert len(calls) == 2 + 2 * 50
