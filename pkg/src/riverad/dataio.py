"""Series containers, CSV formats, scaling, splitting and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

TICK_COLUMN = "tick"


@dataclass(frozen=True)
class MultivariateSeries:
    """``T`` ticks of ``n`` sensors, with optional network and per-sensor labels."""

    values: np.ndarray
    tick_index: np.ndarray
    sensor_ids: tuple[str, ...]
    labels: Optional[np.ndarray] = None
    sensor_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        ticks = np.asarray(self.tick_index, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tick_index", ticks)
        object.__setattr__(self, "sensor_ids", tuple(str(s) for s in self.sensor_ids))
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (T, n), got shape {values.shape}")
        t_len, n = values.shape
        if ticks.shape != (t_len,):
            raise DataError(f"tick_index has shape {ticks.shape}, expected ({t_len},)")
        if len(self.sensor_ids) != n:
            raise DataError(f"{len(self.sensor_ids)} sensor ids for {n} columns")
        if len(set(self.sensor_ids)) != n:
            raise DataError(f"duplicate sensor id in {list(self.sensor_ids)}")
        if t_len > 1 and np.any(np.diff(ticks) <= 0):
            raise DataError("tick_index must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain missing or non-finite entries")
        if self.sensor_labels is not None:
            sl = np.asarray(self.sensor_labels, dtype=np.int8)
            if sl.shape != values.shape:
                raise DataError(f"sensor_labels shape {sl.shape} != values shape {values.shape}")
            _check_binary(sl, "sensor_labels")
            object.__setattr__(self, "sensor_labels", sl)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int8)
            if lab.shape != (t_len,):
                raise DataError(f"labels shape {lab.shape}, expected ({t_len},)")
            _check_binary(lab, "labels")
            if self.sensor_labels is not None and np.any(lab != self.sensor_labels.max(axis=1, initial=0)):
                raise DataError("network labels disagree with per-sensor labels")
            object.__setattr__(self, "labels", lab)
        elif self.sensor_labels is not None:
            object.__setattr__(self, "labels", self.sensor_labels.max(axis=1, initial=0).astype(np.int8))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "MultivariateSeries":
        lab = None if self.labels is None else self.labels[start:stop].copy()
        slab = None if self.sensor_labels is None else self.sensor_labels[start:stop].copy()
        return MultivariateSeries(
            self.values[start:stop].copy(), self.tick_index[start:stop].copy(), self.sensor_ids, lab, slab
        )

    def with_values(self, values: np.ndarray) -> "MultivariateSeries":
        return replace(self, values=values)

    def with_labels(self, labels=None, sensor_labels=None) -> "MultivariateSeries":
        return replace(self, labels=labels, sensor_labels=sensor_labels)


def _check_binary(arr: np.ndarray, what: str) -> None:
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise DataError(f"{what} must contain only 0/1")


def concat_series(parts: Sequence[MultivariateSeries]) -> MultivariateSeries:
    first = parts[0]
    has_lab = all(p.labels is not None for p in parts)
    has_slab = all(p.sensor_labels is not None for p in parts)
    return MultivariateSeries(
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.tick_index for p in parts]),
        first.sensor_ids,
        np.concatenate([p.labels for p in parts]) if has_lab else None,
        np.concatenate([p.sensor_labels for p in parts]) if has_slab else None,
    )


# ---------------------------------------------------------------------------
# CSV


def format_float(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header required")
    return rows[0], rows[1:]


def _parse_tick(cell: str, path: Path, row: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise DataError(f"{path}: row {row}, column '{TICK_COLUMN}': tick {cell!r} is not an integer") from None


def load_series(path, format: str = "csv", fill: str = "reject") -> MultivariateSeries:
    """Load a series CSV with header ``tick,<sensor_1>,...,<sensor_n>``.

    Args:
        path: CSV file.
        format: only ``"csv"`` is supported.
        fill: ``"reject"`` (default) raises on an empty or NaN cell;
            ``"ffill"`` carries the previous tick's value forward.

    Raises:
        FileNotFoundError: missing file.
        DataError: malformed header, unparseable cell (row and column are
            named), duplicate sensor id or non-increasing tick.
    """
    if format != "csv":
        raise DataError(f"unsupported series format {format!r}")
    if fill not in ("reject", "ffill"):
        raise DataError(f"fill must be 'reject' or 'ffill', got {fill!r}")
    path = Path(path)
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise DataError(f"{path}: header needs a tick column and at least one sensor")
    sensor_ids = header[1:]
    seen = set()
    for sid in sensor_ids:
        if sid in seen:
            raise DataError(f"{path}: duplicate sensor id {sid!r}")
        seen.add(sid)
    n = len(sensor_ids)
    values = np.empty((len(rows), n))
    ticks = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != n + 1:
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {n + 1}")
        ticks[r] = _parse_tick(row[0], path, line)
        if r and ticks[r] <= ticks[r - 1]:
            raise DataError(f"{path}: row {line}: tick {ticks[r]} does not increase")
        for c, cell in enumerate(row[1:]):
            text = cell.strip()
            try:
                v = float(text) if text else math.nan
            except ValueError:
                raise DataError(f"{path}: row {line}, column {sensor_ids[c]!r}: cannot parse {cell!r}") from None
            if math.isinf(v):
                raise DataError(f"{path}: row {line}, column {sensor_ids[c]!r}: non-finite value {cell!r}")
            if math.isnan(v):
                if fill == "reject" or r == 0:
                    raise DataError(f"{path}: row {line}, column {sensor_ids[c]!r}: missing value {cell!r}")
                v = values[r - 1, c]
            values[r, c] = v
    return MultivariateSeries(values, ticks, tuple(sensor_ids))


def write_series(series: MultivariateSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([TICK_COLUMN, *series.sensor_ids])
        for t, row in zip(series.tick_index, series.values):
            w.writerow([str(int(t)), *(format_float(v) for v in row)])


def load_labels(path, series: Optional[MultivariateSeries] = None):
    """Read a labels CSV.

    The header decides the kind: ``tick,label`` gives network labels, anything
    else is per-sensor. Returns ``(ticks, labels, sensor_labels)`` with the
    unused one set to None. When ``series`` is given, ticks must match it.
    """
    path = Path(path)
    header, rows = _read_rows(path)
    if not header or header[0] != TICK_COLUMN:
        raise DataError(f"{path}: first header cell must be {TICK_COLUMN!r}")
    cols = header[1:]
    arr = np.empty((len(rows), len(cols)), dtype=np.int8)
    ticks = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        ticks[r] = _parse_tick(row[0], path, r + 2)
        for c, cell in enumerate(row[1:]):
            if cell.strip() not in ("0", "1"):
                raise DataError(f"{path}: row {r + 2}, column {cols[c]!r}: label must be 0 or 1, got {cell!r}")
            arr[r, c] = int(cell)
    if series is not None:
        if not np.array_equal(ticks, series.tick_index):
            raise DataError(f"{path}: label ticks do not match the series ticks")
        if cols != ["label"] and tuple(cols) != series.sensor_ids:
            raise DataError(f"{path}: label columns do not match the series sensors")
    if cols == ["label"]:
        return ticks, arr[:, 0].copy(), None
    return ticks, None, arr


def attach_labels(series: MultivariateSeries, path) -> MultivariateSeries:
    _, lab, slab = load_labels(path, series)
    return series.with_labels(lab, slab)


def write_labels(ticks, labels, path, sensor_ids: Optional[Sequence[str]] = None) -> None:
    """Write network labels (1-D) or per-sensor labels (2-D, needs ``sensor_ids``)."""
    labels = np.asarray(labels)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if labels.ndim == 1:
            w.writerow([TICK_COLUMN, "label"])
            for t, v in zip(ticks, labels):
                w.writerow([int(t), int(v)])
        else:
            if sensor_ids is None:
                raise DataError("per-sensor labels need sensor ids")
            w.writerow([TICK_COLUMN, *sensor_ids])
            for t, row in zip(ticks, labels):
                w.writerow([int(t), *(int(v) for v in row)])


# ---------------------------------------------------------------------------
# splitting, scaling, windowing


def chronological_split(series: MultivariateSeries, train_frac: float, val_frac: float = 0.0):
    """Contiguous train / val / test blocks, in time order.

    ``|train| = floor(train_frac*T)``, ``|val| = floor(val_frac*T)``, test gets the rest.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0.0 <= val_frac < 1.0:
        raise ValueError(f"val_frac must be in [0, 1), got {val_frac}")
    if train_frac + val_frac >= 1.0:
        raise ValueError(f"train_frac + val_frac must be < 1, got {train_frac + val_frac}")
    t_len = series.T
    n_train = int(math.floor(train_frac * t_len))
    n_val = int(math.floor(val_frac * t_len))
    return (
        series.slice(0, n_train),
        series.slice(n_train, n_train + n_val),
        series.slice(n_train + n_val, t_len),
    )


@dataclass(frozen=True)
class ScalingStats:
    """Per-sensor min and max fitted on training data."""

    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.min], "max": [float(v) for v in self.max]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingStats":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_scaling(train: MultivariateSeries) -> ScalingStats:
    if train.T == 0:
        raise DataError("cannot fit scaling on an empty series")
    return ScalingStats(train.values.min(axis=0), train.values.max(axis=0))


def _span(stats: ScalingStats) -> np.ndarray:
    span = stats.max - stats.min
    return np.where(span > 0, span, 1.0)


def scale_values(values: np.ndarray, stats: ScalingStats) -> np.ndarray:
    # a sensor constant in training is only shifted, so its training values map to 0
    # while later departures stay visible
    return (np.asarray(values, dtype=np.float64) - stats.min) / _span(stats)


def apply_scaling(series: MultivariateSeries, stats: ScalingStats) -> MultivariateSeries:
    if series.n != stats.min.shape[0]:
        raise DataError(f"scaling fitted on {stats.min.shape[0]} sensors, series has {series.n}")
    return series.with_values(scale_values(series.values, stats))


def invert_scaling(values: np.ndarray, stats: ScalingStats) -> np.ndarray:
    return np.asarray(values) * _span(stats) + stats.min


@dataclass(frozen=True)
class WindowSample:
    """Lag matrix ``input`` (n, w), with column j holding tick t-j-1, and target y(t)."""

    input: np.ndarray
    target: np.ndarray
    target_tick: int


def window_arrays(values: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked windows of a (T, n) array.

    Returns ``X`` of shape (T-w, n, w) where ``X[s, :, j] = values[s+w-j-1]``
    and targets ``Y = values[w:]``. Both are fresh copies.
    """
    values = np.asarray(values, dtype=np.float64)
    t_len = values.shape[0]
    if w < 1:
        raise ValueError(f"window length must be >= 1, got {w}")
    if t_len <= w:
        raise DataError(f"series of length {t_len} is too short for window length {w}")
    idx = np.arange(w, t_len)[:, None] - 1 - np.arange(w)[None, :]
    X = values[idx].transpose(0, 2, 1).copy()
    return X, values[w:].copy()


def window_dataset(series: MultivariateSeries, w: int) -> list[WindowSample]:
    X, Y = window_arrays(series.values, w)
    ticks = series.tick_index[w:]
    return [WindowSample(X[s], Y[s], int(ticks[s])) for s in range(X.shape[0])]
