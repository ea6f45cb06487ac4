import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riverad import anomgen
from riverad.anomgen import AnomalyConfig
from riverad.dataio import MultivariateSeries
from riverad.errors import ConfigError


def flat(T=200, n=5):
    return MultivariateSeries(np.zeros((T, n)), np.arange(1, T + 1), [f"s{i}" for i in range(n)])


def replay(series, records, config):
    """Rebuild the drift part of the contamination from the records."""
    out = np.zeros_like(series.values)
    ids = list(series.sensor_ids)
    for r in records:
        if r.kind != "drift":
            continue
        lo = r.start_tick - 1
        hi = min(lo + r.length, series.T)
        out[lo:hi, ids.index(r.sensor)] += config.delta * np.arange(1, r.length + 1)[: hi - lo]
    return out


class TestInject:
    def test_drift_adds_exact_ramp(self):
        cfg = AnomalyConfig(n_drift=6, n_var=0, lambda_drift=8, delta=2.5, seed=3)
        s = flat()
        out, records = anomgen.inject(s, cfg)
        np.testing.assert_array_equal(out.values, replay(s, records, cfg))
        assert len(records) == 6 and all(r.kind == "drift" for r in records)

    def test_labels_cover_touched_cells_only(self):
        cfg = AnomalyConfig(n_drift=4, n_var=4, lambda_drift=5, lambda_var=5, seed=1)
        s = flat()
        out, records = anomgen.inject(s, cfg)
        expect = np.zeros((s.T, s.n), dtype=np.int8)
        for r in records:
            lo = r.start_tick - 1
            expect[lo : min(lo + r.length, s.T), list(s.sensor_ids).index(r.sensor)] = 1
        np.testing.assert_array_equal(out.sensor_labels, expect)
        np.testing.assert_array_equal(out.labels, expect.max(axis=1))

    def test_variability_spread(self):
        # sparse enough that overlapping windows are rare
        cfg = AnomalyConfig(n_drift=0, n_var=60, lambda_var=20, zeta=3.0, seed=7)
        out, _ = anomgen.inject(flat(5000, 10), cfg)
        touched = out.values[out.sensor_labels == 1]
        assert touched.std() == pytest.approx(3.0, rel=0.1)

    def test_variability_pooled_spread(self):
        cfg = AnomalyConfig(n_drift=0, n_var=1000, lambda_var=10, zeta=12.0, seed=11)
        s = flat(20_000, 50)
        out, records = anomgen.inject(s, cfg)
        assert len(records) == 1000
        added = out.values[out.sensor_labels == 1]
        assert 11.5 <= added.std() <= 12.5

    def test_small_drift_ramp(self):
        s = flat(10, 1)
        cfg = AnomalyConfig(n_drift=1, n_var=0, lambda_drift=3, delta=1.0, seed=0)
        out, (rec,) = anomgen.inject(s, cfg)
        lo = rec.start_tick - 1
        hi = min(lo + rec.length, 10)
        np.testing.assert_array_equal(out.values[lo:hi, 0], np.arange(1, rec.length + 1)[: hi - lo])

    def test_drift_cells_change(self):
        out, records = anomgen.inject(flat(), AnomalyConfig(n_var=0, seed=8))
        assert np.all(out.values[out.sensor_labels == 1] != 0)
        assert sum(r.length for r in records) >= out.sensor_labels.sum()

    def test_proportion_examples(self):
        assert anomgen.proportion_anomalous(np.zeros(5)) == 0.0
        assert anomgen.proportion_anomalous(np.r_[np.ones(3), np.zeros(7)]) == 0.3

    def test_clipped_at_end(self):
        cfg = AnomalyConfig(n_drift=50, n_var=0, lambda_drift=30, seed=2)
        s = flat(40, 2)
        out, records = anomgen.inject(s, cfg)
        assert any(r.start_tick - 1 + r.length > s.T for r in records)
        assert out.values.shape == s.values.shape

    def test_deterministic_and_original_untouched(self):
        s = flat()
        a, _ = anomgen.inject(s, AnomalyConfig(seed=5))
        b, _ = anomgen.inject(s, AnomalyConfig(seed=5))
        np.testing.assert_array_equal(a.values, b.values)
        assert np.all(s.values == 0)

    def test_zero_anomalies(self):
        out, records = anomgen.inject(flat(), AnomalyConfig(n_drift=0, n_var=0))
        assert records == [] and out.labels.sum() == 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 10_000))
    def test_proportion_bounds(self, nd, nv, seed):
        out, records = anomgen.inject(flat(100, 4), AnomalyConfig(n_drift=nd, n_var=nv, seed=seed))
        p = anomgen.proportion_anomalous(out.labels)
        assert 0.0 <= p <= min(1.0, sum(r.length for r in records) / 100)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            AnomalyConfig(n_drift=-1)
        with pytest.raises(ConfigError):
            AnomalyConfig(lambda_var=0)

    def test_records_round_trip(self, tmp_path):
        _, records = anomgen.inject(flat(), AnomalyConfig(seed=4))
        anomgen.write_records(records, tmp_path / "r.csv")
        assert anomgen.read_records(tmp_path / "r.csv") == records
