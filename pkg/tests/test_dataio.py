import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from riverad import dataio
from riverad.dataio import MultivariateSeries
from riverad.errors import DataError


def make_series(T=10, n=3, seed=0, **kw):
    rng = np.random.default_rng(seed)
    return MultivariateSeries(rng.normal(size=(T, n)), np.arange(1, T + 1), [f"s{i}" for i in range(n)], **kw)


class TestSeries:
    def test_network_labels_derived_from_sensor_labels(self):
        sl = np.zeros((4, 2), dtype=np.int8)
        sl[2, 1] = 1
        s = make_series(4, 2, sensor_labels=sl)
        np.testing.assert_array_equal(s.labels, [0, 0, 1, 0])

    def test_inconsistent_labels_rejected(self):
        sl = np.zeros((4, 2), dtype=np.int8)
        with pytest.raises(DataError):
            make_series(4, 2, labels=[1, 0, 0, 0], sensor_labels=sl)

    @pytest.mark.parametrize(
        "kw",
        [
            {"values": np.zeros((3, 2)), "tick_index": [1, 1, 2], "sensor_ids": ["a", "b"]},
            {"values": np.zeros((3, 2)), "tick_index": [1, 2, 3], "sensor_ids": ["a", "a"]},
            {"values": np.array([[0.0, np.nan]]), "tick_index": [1], "sensor_ids": ["a", "b"]},
            {"values": np.zeros(3), "tick_index": [1, 2, 3], "sensor_ids": ["a"]},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            MultivariateSeries(**kw)


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path):
        s = make_series(25, 4, seed=3)
        p = tmp_path / "s.csv"
        dataio.write_series(s, p)
        back = dataio.load_series(p)
        np.testing.assert_array_equal(back.values, s.values)
        np.testing.assert_array_equal(back.tick_index, s.tick_index)
        assert back.sensor_ids == s.sensor_ids

    def test_rewrite_is_byte_identical(self, tmp_path):
        dataio.write_series(make_series(30, 3, seed=4), tmp_path / "a.csv")
        dataio.write_series(dataio.load_series(tmp_path / "a.csv"), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            dataio.load_series(tmp_path / "nope.csv")

    def test_bad_cell_names_row_and_column(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("tick,a,b\n1,1.0,2.0\n2,1.0,oops\n")
        with pytest.raises(DataError, match=r"row 3, column 'b'"):
            dataio.load_series(p)

    def test_missing_value_rejected_or_filled(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("tick,a,b\n1,1.0,2.0\n2,,3.0\n")
        with pytest.raises(DataError, match="missing"):
            dataio.load_series(p)
        s = dataio.load_series(p, fill="ffill")
        np.testing.assert_array_equal(s.values, [[1.0, 2.0], [1.0, 3.0]])

    def test_duplicate_ids_and_ticks(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("tick,a,a\n1,1,2\n")
        with pytest.raises(DataError, match="duplicate"):
            dataio.load_series(p)
        p.write_text("tick,a\n2,1\n2,3\n")
        with pytest.raises(DataError, match="increase"):
            dataio.load_series(p)

    def test_labels_round_trip(self, tmp_path):
        sl = np.zeros((5, 3), dtype=np.int8)
        sl[1, 2] = sl[3, 0] = 1
        s = make_series(5, 3, sensor_labels=sl)
        dataio.write_labels(s.tick_index, s.sensor_labels, tmp_path / "sl.csv", s.sensor_ids)
        dataio.write_labels(s.tick_index, s.labels, tmp_path / "l.csv")
        _, lab, slab = dataio.load_labels(tmp_path / "sl.csv", s)
        assert lab is None
        np.testing.assert_array_equal(slab, sl)
        _, lab, slab = dataio.load_labels(tmp_path / "l.csv", s)
        assert slab is None
        np.testing.assert_array_equal(lab, [0, 1, 0, 1, 0])


class TestSplit:
    def test_block_sizes_use_floor(self):
        s = make_series(101, 2)
        tr, va, te = dataio.chronological_split(s, 0.6, 0.2)
        assert (tr.T, va.T, te.T) == (60, 20, 21)
        np.testing.assert_array_equal(np.concatenate([tr.tick_index, va.tick_index, te.tick_index]), s.tick_index)

    @pytest.mark.parametrize("tf,vf", [(0.0, 0.1), (1.0, 0.0), (0.7, 0.3), (0.5, -0.1)])
    def test_bad_fractions(self, tf, vf):
        with pytest.raises(ValueError):
            dataio.chronological_split(make_series(), tf, vf)


class TestScaling:
    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 4)),
                      elements=st.floats(-1e6, 1e6)))
    def test_training_block_maps_into_unit_interval_and_inverts(self, values):
        s = MultivariateSeries(values, np.arange(values.shape[0]), [f"s{i}" for i in range(values.shape[1])])
        stats = dataio.fit_scaling(s)
        sc = dataio.scale_values(values, stats)
        assert np.all(sc >= 0.0) and np.all(sc <= 1.0 + 1e-12)
        live = stats.max > stats.min
        np.testing.assert_allclose(dataio.invert_scaling(sc, stats)[:, live], values[:, live],
                                   rtol=1e-9, atol=1e-6)

    def test_worked_examples(self):
        s = MultivariateSeries(np.array([[2.0, 5.0], [4.0, 5.0], [3.0, 5.0]]), [1, 2, 3], ["a", "b"])
        stats = dataio.fit_scaling(s)
        np.testing.assert_allclose(dataio.apply_scaling(s, stats).values, [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        assert dataio.scale_values(np.array([[6.0, 5.0]]), stats)[0, 0] == 2.0

    def test_degenerate_sensor_is_shifted_only(self):
        s = MultivariateSeries(np.array([[1.0, 2.0], [1.0, 5.0]]), [1, 2], ["a", "b"])
        stats = dataio.fit_scaling(s)
        out = dataio.scale_values(np.array([[7.0, 3.5]]), stats)
        np.testing.assert_allclose(out, [[6.0, 0.5]])


class TestWindows:
    def test_lag_layout(self):
        values = np.arange(12.0).reshape(6, 2)
        X, Y = dataio.window_arrays(values, 3)
        assert X.shape == (3, 2, 3)
        # column j holds tick t-j-1
        np.testing.assert_array_equal(X[0, :, 0], values[2])
        np.testing.assert_array_equal(X[0, :, 2], values[0])
        np.testing.assert_array_equal(Y, values[3:])

    def test_dataset_ticks(self):
        s = make_series(8, 2)
        ds = dataio.window_dataset(s, 2)
        assert len(ds) == 6
        assert ds[0].target_tick == 3
        np.testing.assert_array_equal(ds[0].input[:, 1], s.values[0])

    def test_too_short(self):
        with pytest.raises(DataError):
            dataio.window_arrays(np.zeros((3, 2)), 3)
