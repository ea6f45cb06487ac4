import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riverad import detector
from riverad.dataio import MultivariateSeries
from riverad.detector import DetectorConfig
from riverad.errors import DataError


class TestScores:
    def test_compute_errors(self):
        y = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(detector.compute_errors(y, y), 0.0)
        assert detector.compute_errors([[-1.0]], [[1.0]])[0, 0] == 2.0
        with pytest.raises(DataError):
            detector.compute_errors(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_robust_normalize_hand_value(self):
        stats = detector.fit_norm_stats(np.array([[1.0], [2.0], [3.0], [4.0]]))
        assert stats.median[0] == 2.5 and stats.iqr[0] == 1.5
        assert detector.robust_normalize([[4.0]], stats)[0, 0] == pytest.approx(1.0)
        assert detector.robust_normalize([[2.5]], stats)[0, 0] == 0.0

    def test_iqr_floor(self):
        stats = detector.fit_norm_stats(np.full((10, 1), 0.3))
        out = detector.robust_normalize([[0.5]], stats)
        assert out[0, 0] == pytest.approx(0.2 / detector.IQR_FLOOR)

    def test_missing_sensor(self):
        stats = detector.fit_norm_stats(np.ones((3, 2)))
        with pytest.raises(DataError):
            detector.robust_normalize(np.ones((3, 3)), stats)


class TestGlobalRule:
    def test_strict_inequality(self):
        val = np.array([[0.0, 2.5], [1.0, -1.0]])
        test = np.array([[2.6, 0.0], [2.5, 2.5], [0.0, 0.0]])
        flags, kappa, sflags = detector.global_threshold_flags(test, val)
        assert kappa == 2.5
        np.testing.assert_array_equal(flags, [1, 0, 0])
        np.testing.assert_array_equal(sflags[0], [1, 0])

    def test_sma_window_one_is_identity(self):
        rng = np.random.default_rng(0)
        val, test = rng.normal(size=(20, 3)), rng.normal(size=(30, 3)) * 2
        a = detector.global_threshold_flags(test, val, None)[0]
        b = detector.global_threshold_flags(test, val, 1)[0]
        np.testing.assert_array_equal(a, b)

    def test_smoothing_uses_trailing_mean(self):
        val = np.zeros((5, 1))
        test = np.array([[0.0], [3.0], [0.0], [0.0]])
        flags, _, _ = detector.global_threshold_flags(test, val, 3)
        np.testing.assert_array_equal(flags, [0, 1, 1, 1])
        test = np.array([[-1.0], [0.5], [-1.0]])
        np.testing.assert_array_equal(detector.global_threshold_flags(test, val, 2)[0], [0, 0, 0])

    def test_empty_validation(self):
        with pytest.raises(DataError):
            detector.global_threshold_flags(np.zeros((2, 2)), np.zeros((0, 2)))


class TestSensorRule:
    def test_percentile_example(self):
        val = np.arange(100.0).reshape(50, 2)
        adj = np.ones((2, 2), dtype=np.int8)
        kappa = detector.sensor_thresholds(val, adj, 50.0)
        np.testing.assert_allclose(kappa, 49.5)
        np.testing.assert_allclose(detector.sensor_thresholds(val, adj, 100.0), 99.0)

    def test_pooling_uses_in_neighbourhood(self):
        val = np.array([[0.0, 10.0, 100.0]] * 4)
        adj = np.eye(3, dtype=np.int8)
        adj[1, 0] = 1  # edge 1 -> 0: sensor 0 pools over {0, 1}
        kappa = detector.sensor_thresholds(val, adj, 100.0)
        np.testing.assert_array_equal(kappa, [10.0, 10.0, 100.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1.0, 99.0), st.floats(0.0, 1.0))
    def test_raising_tau_never_adds_flags(self, seed, tau, bump):
        rng = np.random.default_rng(seed)
        val, test = rng.normal(size=(40, 4)), rng.normal(size=(30, 4)) * 1.5
        adj = (rng.random((4, 4)) < 0.5).astype(np.int8)
        np.fill_diagonal(adj, 1)
        lo, _ = detector.sensor_threshold_flags(test, val, adj, tau)
        hi, _ = detector.sensor_threshold_flags(test, val, adj, min(100.0, tau + bump))
        assert np.all(hi <= lo)

    def test_network_flag_is_or(self):
        rng = np.random.default_rng(1)
        val, test = rng.normal(size=(40, 4)), rng.normal(size=(30, 4)) * 2
        rep = detector.detect("gdn_plus", val, test, np.eye(4, dtype=np.int8))
        np.testing.assert_array_equal(rep.network_flags, rep.sensor_flags.max(axis=1))

    def test_permuting_test_ticks_permutes_flags(self):
        rng = np.random.default_rng(2)
        val, test = rng.normal(size=(40, 3)), rng.normal(size=(25, 3)) * 2
        perm = rng.permutation(25)
        adj = np.ones((3, 3), dtype=np.int8)
        a = detector.detect("gdn_plus", val, test, adj)
        b = detector.detect("gdn_plus", val, test[perm], adj)
        np.testing.assert_array_equal(a.sensor_flags[perm], b.sensor_flags)

    def test_bad_tau(self):
        with pytest.raises(DataError):
            detector.sensor_thresholds(np.zeros((3, 2)), np.eye(2), 0.0)


class TestPositivityFilter:
    def test_cases(self):
        raw = np.array([[-0.1, 0.0, 5.0]])
        flags = np.array([[0, 0, 1]])
        np.testing.assert_array_equal(detector.positivity_filter_flags(raw, flags), [[1, 0, 1]])

    def test_superset_of_gdn_plus(self):
        rng = np.random.default_rng(3)
        val, test = rng.normal(size=(40, 3)), rng.normal(size=(25, 3)) * 2
        raw = rng.normal(size=(25, 3))
        adj = np.ones((3, 3), dtype=np.int8)
        plus = detector.detect("gdn_plus", val, test, adj, raw)
        pp = detector.detect("gdn_plus_plus", val, test, adj, raw)
        assert np.all(pp.sensor_flags >= plus.sensor_flags)
        with pytest.raises(DataError):
            detector.detect("gdn_plus_plus", val, test, adj)


class TestMetrics:
    def test_hand_example(self):
        m, undefined = detector.metrics_from_counts({"TP": 5, "FP": 5, "TN": 85, "FN": 5})
        assert m["recall"] == 0.5 and m["precision"] == 0.5 and m["accuracy"] == 0.9
        assert m["specificity"] == pytest.approx(0.9444, abs=5e-5)
        assert undefined == []

    def test_all_zero_flags(self):
        rep = detector.evaluate(np.zeros(10), np.r_[np.ones(3), np.zeros(7)])
        assert rep.metrics["recall"] == 0.0 and rep.metrics["precision"] == 0.0
        assert rep.undefined == ["precision"]

    def test_perfect(self):
        truth = np.array([0, 1, 1, 0, 1])
        rep = detector.evaluate(truth, truth)
        assert all(rep.metrics[k] == 1.0 for k in detector.METRICS)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
    def test_counts_partition_ticks(self, pairs):
        flags = np.array([p[0] for p in pairs])
        truth = np.array([p[1] for p in pairs])
        c = detector.confusion(flags, truth)
        assert sum(c.values()) == len(pairs)
        assert c["TP"] + c["FN"] == truth.sum()
        m, _ = detector.metrics_from_counts(c)
        if c["TP"] + c["FN"]:
            assert m["recall"] * (c["TP"] + c["FN"]) == pytest.approx(c["TP"])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            detector.evaluate(np.zeros(3), np.zeros(4))


class TestLocalization:
    def test_sensor_and_neighbourhood_hits(self):
        adj = np.eye(3, dtype=np.int8)
        adj[2, 0] = 1  # 2 is an in-neighbour of 0
        truth_s = np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0]])
        flags_s = np.array([[1, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 0]])
        net_flags = flags_s.max(axis=1)
        loc = detector.localization(flags_s, truth_s, net_flags, truth_s.max(axis=1), adj)
        assert loc["n_true_positives"] == 3
        assert loc["sensor"] == pytest.approx(1 / 3)
        assert loc["neighborhood"] == pytest.approx(2 / 3)

    def test_no_true_positives(self):
        loc = detector.localization(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2), np.eye(2))
        assert loc == {"n_true_positives": 0, "sensor": 0.0, "neighborhood": 0.0}


def series_of(values, labels=None):
    values = np.asarray(values, dtype=float)
    return MultivariateSeries(values, np.arange(1, values.shape[0] + 1), [f"s{i}" for i in range(values.shape[1])],
                              labels)


class TestRandomWalk:
    def test_constant_series(self):
        rep, scores = detector.random_walk_baseline(series_of(np.full((40, 2), 3.0)), 0.5, 0.25)
        assert np.all(scores.raw == 0.0)
        assert rep.network_flags.sum() == 0

    def test_unit_step(self):
        x = np.zeros((40, 1))
        x[33:] = 1.0
        rep, scores = detector.random_walk_baseline(series_of(np.c_[x, np.linspace(0, 1, 40)]), 0.5, 0.25)
        # test block starts at position 30; its errors start at position 31
        nz = np.flatnonzero(scores.raw[:, 0])
        np.testing.assert_array_equal(nz, [33 - 31])

    def test_report_matches_evaluate(self):
        rng = np.random.default_rng(0)
        x = np.cumsum(rng.normal(size=(200, 3)), axis=0)
        labels = (rng.random(200) < 0.1).astype(int)
        rep, _ = detector.random_walk_baseline(series_of(x, labels), 0.5, 0.2)
        again = detector.evaluate(rep.network_flags, labels[141:])
        assert again.counts == rep.counts and again.metrics == rep.metrics

    def test_too_short(self):
        with pytest.raises(DataError):
            detector.random_walk_baseline(series_of(np.zeros((1, 1))), 0.5, 0.2)


class TestFiles:
    def test_flags_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        rep = detector.detect("gdn_plus", rng.normal(size=(20, 2)), rng.normal(size=(6, 2)) * 3, np.eye(2))
        detector.write_flags(tmp_path / "f.csv", np.arange(4, 10), rep, ["a", "b"])
        ticks, flags, sflags = detector.read_flags(tmp_path / "f.csv")
        np.testing.assert_array_equal(ticks, np.arange(4, 10))
        np.testing.assert_array_equal(flags, rep.network_flags)
        np.testing.assert_array_equal(sflags, rep.sensor_flags)

    def test_report_without_labels_has_no_metrics(self):
        rep = detector.detect("gdn", np.zeros((3, 2)), np.ones((2, 2)), config=DetectorConfig())
        doc = rep.to_dict()
        assert "metrics" not in doc and doc["n_flagged"] == 2
