import numpy as np
import pytest

from rtdap.pls import (
    DegenerateInput,
    DimensionMismatch,
    WindowJobRunner,
    WindowJobSpec,
    extract_training_set,
    fitted_r2,
    join_series,
    load_model,
    pls_fit,
    pls_predict,
    save_model,
)
from rtdap.store import TsdbStore

MIN = 60_000
T0 = 1_380_024_000_000


def ols_predict(X, y, x):
    """Normal-equations oracle."""
    Xc = np.column_stack([np.ones(len(X)), X])
    beta, *_ = np.linalg.lstsq(Xc, y, rcond=None)
    return beta[0] + np.atleast_2d(x) @ beta[1:]


class TestFit:
    def test_rank_one_exact(self):
        x = np.linspace(-3, 3, 20).reshape(-1, 1)
        y = 2.0 * x.ravel()
        model = pls_fit(x, y, k=1)
        assert pls_predict(model, np.array([3.0])) == pytest.approx(6.0, abs=1e-10)

    def test_full_rank_matches_ols(self):
        rng = np.random.default_rng(31)
        X = rng.standard_normal((60, 5))
        w = np.array([1.5, -2.0, 0.3, 0.0, 4.0])
        y = X @ w + 0.01 * rng.standard_normal(60)
        model = pls_fit(X, y, k=5)
        test_X = rng.standard_normal((40, 5))
        got = pls_predict(model, test_X)
        want = ols_predict(X, y, test_X).ravel()
        rmse = float(np.sqrt(np.mean((got - want) ** 2)))
        assert rmse < 1e-8

    def test_scores_mutually_orthogonal(self):
        rng = np.random.default_rng(32)
        X = rng.standard_normal((20, 5))
        y = rng.standard_normal(20)
        # recompute scores by replaying the deflation
        model = pls_fit(X, y, k=4)
        Xc = (X[:, model.kept] - model.x_mean) / model.x_std
        scores = []
        for c in range(model.k):
            t = Xc @ model.weights[:, c]
            scores.append(t)
            Xc = Xc - np.outer(t, model.loadings[:, c])
        for i in range(len(scores)):
            for j in range(i + 1, len(scores)):
                assert abs(float(scores[i] @ scores[j])) < 1e-9

    def test_predict_at_centroid_is_mean(self):
        rng = np.random.default_rng(33)
        X = rng.standard_normal((25, 3)) * [1.0, 10.0, 0.1] + [5.0, -2.0, 0.0]
        y = rng.standard_normal(25) * 3 + 7
        model = pls_fit(X, y, k=2)
        assert pls_predict(model, X.mean(axis=0)) == pytest.approx(y.mean(), abs=1e-12)

    def test_batch_equals_rowwise(self):
        rng = np.random.default_rng(34)
        X = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        model = pls_fit(X, y, k=3)
        batch = pls_predict(model, X)
        rowwise = np.array([pls_predict(model, row) for row in X])
        # gemm vs gemv may differ in the last ulp
        np.testing.assert_allclose(batch, rowwise, rtol=1e-12, atol=1e-12)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(35)
        X = rng.standard_normal((40, 4))
        y = rng.standard_normal(40)
        x_new = rng.standard_normal(4)
        base = pls_predict(pls_fit(X, y, k=2), x_new)
        scaled = pls_predict(pls_fit(X, 250.0 * y, k=2), x_new)
        assert scaled == pytest.approx(250.0 * base, rel=1e-9)

    def test_r2_nondecreasing_in_k(self):
        rng = np.random.default_rng(36)
        X = rng.standard_normal((50, 6))
        y = X @ rng.standard_normal(6) + 0.3 * rng.standard_normal(50)
        r2s = [fitted_r2(pls_fit(X, y, k=k), X, y) for k in range(1, 7)]
        for a, b in zip(r2s, r2s[1:]):
            assert b >= a - 1e-9

    def test_zero_variance_column_dropped_with_warning(self):
        rng = np.random.default_rng(37)
        X = rng.standard_normal((30, 3))
        X[:, 1] = 4.2
        y = X[:, 0] * 2 + X[:, 2]
        with pytest.warns(UserWarning, match="zero-variance"):
            model = pls_fit(X, y, k=2)
        assert list(model.kept) == [0, 2]
        assert pls_predict(model, np.array([1.0, 4.2, 0.0])) == pytest.approx(2.0, abs=1e-8)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInput):
            pls_fit(np.ones((1, 2)), np.ones(1), 1)  # n < 2
        with pytest.raises(DegenerateInput):
            pls_fit(np.ones((5, 2)), np.arange(5.0), 1)  # all-constant X
        X = np.random.default_rng(1).standard_normal((5, 2))
        with pytest.raises(DegenerateInput):
            pls_fit(X, np.arange(5.0), 5)  # k > min(n-1, p)

    def test_dimension_mismatch_on_predict(self):
        X = np.random.default_rng(2).standard_normal((10, 3))
        model = pls_fit(X, X[:, 0], k=1)
        with pytest.raises(DimensionMismatch):
            pls_predict(model, np.zeros(4))

    def test_deterministic_bit_stable(self):
        rng = np.random.default_rng(38)
        X = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        a = pls_fit(X.copy(), y.copy(), k=3)
        b = pls_fit(X.copy(), y.copy(), k=3)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.q, b.q)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(39)
        X = rng.standard_normal((20, 4))
        model = pls_fit(X, X @ np.ones(4), k=2)
        path = str(tmp_path / "m.npz")
        save_model(path, model)
        loaded = load_model(path)
        x = rng.standard_normal(4)
        assert pls_predict(loaded, x) == pls_predict(model, x)


class TestJoin:
    def test_fully_aligned_no_drops(self):
        a = [(T0 + i * 1000, "F", float(i), 0) for i in range(10)]
        b = [(T0 + i * 1000, "F", float(i) * 2, 0) for i in range(10)]
        matrix, ts = join_series([a, b], tolerance_ms=500)
        assert matrix.shape == (10, 2)
        np.testing.assert_array_equal(matrix[:, 1], matrix[:, 0] * 2)

    def test_jitter_within_tolerance_joins(self):
        rng = np.random.default_rng(40)
        anchor = [(T0 + i * 1000, "F", float(i), 0) for i in range(50)]
        jitter = [(T0 + i * 1000 + int(rng.integers(-300, 300)), "F", float(i) + 100, 0) for i in range(50)]
        matrix, ts = join_series([anchor, jitter], tolerance_ms=400)
        assert matrix.shape[0] == 50
        # hand-joined oracle: nearest is the same index for jitter < half period
        np.testing.assert_array_equal(matrix[:, 1], matrix[:, 0] + 100)

    def test_gap_rows_dropped(self):
        anchor = [(T0 + i * 1000, "F", float(i), 0) for i in range(10)]
        gappy = [(T0 + i * 1000, "F", 1.0, 0) for i in range(10) if not 3 <= i <= 5]
        matrix, ts = join_series([anchor, gappy], tolerance_ms=400)
        assert matrix.shape[0] == 7
        assert set(ts) == {T0 + i * 1000 for i in range(10) if not 3 <= i <= 5}

    def test_empty_inputs(self):
        matrix, ts = join_series([], 100)
        assert matrix.shape == (0, 0)
        matrix, ts = join_series([[], []], 100)
        assert matrix.shape[0] == 0


class TestExtractTrainingSet:
    def test_empty_range_zero_rows(self):
        st = TsdbStore()
        st.register_tag("Z::g/a/PV")
        st.register_tag("Z::g/b/PV")
        matrix, ts = extract_training_set(st, ["Z::g/a/PV", "Z::g/b/PV"], T0, T0 + MIN)
        assert matrix.shape[0] == 0

    def test_aligned_tags_full_join(self):
        st = TsdbStore()
        a = st.register_tag("Z::g/a/PV")
        b = st.register_tag("Z::g/b/PV")
        rows = []
        for i in range(30):
            rows.append((a, T0 + i * 1000, "F", float(i), 0))
            rows.append((b, T0 + i * 1000, "F", float(i * 3), 0))
        st.put_batch(rows)
        matrix, ts = extract_training_set(st, ["Z::g/a/PV", "Z::g/b/PV"], T0, T0 + MIN)
        assert matrix.shape == (30, 2)
        np.testing.assert_array_equal(matrix[:, 1], matrix[:, 0] * 3)


class TestWindowJob:
    def _store_with_inputs(self, n_minutes=12, period_ms=1000):
        st = TsdbStore()
        a = st.register_tag("Z::g/a/PV")
        b = st.register_tag("Z::g/b/PV")
        rows = []
        n = n_minutes * 60
        for i in range(n):
            t = T0 + i * period_ms
            rows.append((a, t, "F", float(np.sin(i / 10.0)), 0))
            rows.append((b, t, "F", float(np.cos(i / 10.0)), 0))
        st.put_batch(rows)
        return st

    def _model(self):
        rng = np.random.default_rng(41)
        X = rng.standard_normal((50, 2))
        y = X @ np.array([2.0, -1.0]) + 5.0
        return pls_fit(X, y, k=2)

    def test_constant_inputs_constant_output(self):
        st = TsdbStore()
        a = st.register_tag("Z::g/a/PV")
        b = st.register_tag("Z::g/b/PV")
        st.put_batch(
            [(a, T0 + i * 1000, "F", 1.5, 0) for i in range(600)]
            + [(b, T0 + i * 1000, "F", -0.5, 0) for i in range(600)]
        )
        spec = WindowJobSpec(["Z::g/a/PV", "Z::g/b/PV"], "Z::derived/c7", 60_000, 10_000)
        out = []
        runner = WindowJobRunner(self._model(), spec, st, emit=lambda tag, t, v: out.append((tag, t, v)))
        for tick in range(5):
            runner.tick(T0 + 120_000 + tick * 10_000)
        assert len(out) == 5
        expected = pls_predict(self._model(), np.array([1.5, -0.5]))
        assert all(v == pytest.approx(expected) for _, _, v in out)
        assert all(tag == "Z::derived/c7" for tag, _, _ in out)

    def test_record_count_formula(self):
        st = self._store_with_inputs(n_minutes=12)
        spec = WindowJobSpec(["Z::g/a/PV", "Z::g/b/PV"], "Z::derived/c7", 600_000, 60_000)
        out = []
        runner = WindowJobRunner(self._model(), spec, st, emit=lambda tag, t, v: out.append(v))
        duration_ms = 10 * 60_000
        n_ticks = duration_ms // spec.period_ms
        for i in range(n_ticks):
            runner.tick(T0 + 60_000 + i * spec.period_ms)
        assert runner.ticks == n_ticks
        assert runner.emitted == n_ticks - runner.skipped
        assert len(out) == runner.emitted
        assert runner.skipped == 0  # inputs cover every window here

    def test_insufficient_data_skips_and_counts(self):
        st = TsdbStore()
        st.register_tag("Z::g/a/PV")
        st.register_tag("Z::g/b/PV")
        spec = WindowJobSpec(["Z::g/a/PV", "Z::g/b/PV"], "Z::derived/c7", 60_000, 10_000)
        runner = WindowJobRunner(self._model(), spec, st, emit=lambda *a: None)
        assert runner.tick(T0 + 10_000) is None
        assert (runner.ticks, runner.emitted, runner.skipped) == (1, 0, 1)

    def test_missing_input_rows_dropped_via_join(self):
        st = TsdbStore()
        a = st.register_tag("Z::g/a/PV")
        b = st.register_tag("Z::g/b/PV")
        # b stops reporting halfway through the window
        st.put_batch(
            [(a, T0 + i * 1000, "F", 1.0, 0) for i in range(60)]
            + [(b, T0 + i * 1000, "F", 2.0, 0) for i in range(30)]
        )
        spec = WindowJobSpec(["Z::g/a/PV", "Z::g/b/PV"], "Z::derived/c7", 60_000, 1_000)
        out = []
        runner = WindowJobRunner(self._model(), spec, st, emit=lambda tag, t, v: out.append(v))
        runner.tick(T0 + 60_000)
        # prediction still possible: latest *joined* row is at i=29
        assert runner.emitted == 1

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            WindowJobSpec([], "Z::d/x", 60_000, 1_000)
        with pytest.raises(ValueError):
            WindowJobSpec(["Z::g/a/PV"], "Z::d/x", 500, 1_000)
