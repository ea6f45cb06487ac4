"""Error scoring, threshold rules and evaluation.

Three flagging rules share one scoring pipeline:

* ``gdn``: flag tick t when the largest normalised error across sensors
  exceeds the maximum normalised validation error (one global threshold).
* ``gdn_plus``: flag sensor i at tick t when its normalised error exceeds
  the tau-th percentile of validation errors pooled over i's
  in-neighbourhood in the learned graph.
* ``gdn_plus_plus``: ``gdn_plus`` OR'ed with a negative raw reading.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .dataio import MultivariateSeries, chronological_split, fit_scaling, format_float, scale_values
from .errors import DataError

IQR_FLOOR = 1e-2
MODES = ("gdn", "gdn_plus", "gdn_plus_plus", "rw_baseline")
METRICS = ("recall", "precision", "accuracy", "specificity")


@dataclass(frozen=True)
class NormStats:
    median: np.ndarray
    iqr: np.ndarray
    iqr_floor: float = IQR_FLOOR

    def to_dict(self) -> dict:
        return {"median": self.median.tolist(), "iqr": self.iqr.tolist(), "iqr_floor": self.iqr_floor}


@dataclass
class ErrorScores:
    raw: np.ndarray
    normalized: np.ndarray
    norm_stats: NormStats
    source: str = "test"


@dataclass(frozen=True)
class Thresholds:
    kind: str  # "global_max" or "sensor_percentile"
    kappa: np.ndarray  # scalar for global_max, (n,) for sensor_percentile
    tau: Optional[float] = None
    sma_window: Optional[int] = None


@dataclass
class DetectionReport:
    network_flags: np.ndarray
    sensor_flags: Optional[np.ndarray] = None
    counts: Optional[dict] = None
    metrics: Optional[dict] = None
    undefined: list = field(default_factory=list)
    localization: Optional[dict] = None
    thresholds: Optional[Thresholds] = None
    mode: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "n_ticks": int(self.network_flags.shape[0]),
               "n_flagged": int(self.network_flags.sum())}
        if self.thresholds is not None:
            th = self.thresholds
            out["threshold"] = {
                "kind": th.kind,
                "kappa": np.asarray(th.kappa, dtype=float).tolist(),
                "tau": th.tau,
                "sma_window": th.sma_window,
            }
        if self.counts is not None:
            out["confusion"] = self.counts
            out["metrics"] = self.metrics
            out["undefined_metrics"] = list(self.undefined)
        if self.localization is not None:
            out["localization"] = self.localization
        return out


# ---------------------------------------------------------------------------
# scores


def compute_errors(predictions, actuals) -> np.ndarray:
    """Element-wise absolute forecast error."""
    predictions = np.asarray(predictions, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if predictions.shape != actuals.shape:
        raise DataError(f"prediction shape {predictions.shape} != actual shape {actuals.shape}")
    return np.abs(actuals - predictions)


def fit_norm_stats(val_errors, iqr_floor: float = IQR_FLOOR) -> NormStats:
    """Per-sensor median and inter-quartile range (linear interpolation)."""
    val_errors = np.asarray(val_errors, dtype=np.float64)
    if val_errors.ndim != 2 or val_errors.shape[0] == 0:
        raise DataError("validation errors must be a non-empty (T, n) array")
    q1, med, q3 = np.percentile(val_errors, [25, 50, 75], axis=0, method="linear")
    return NormStats(med, q3 - q1, iqr_floor)


def robust_normalize(raw, stats: NormStats) -> np.ndarray:
    """``(raw - median_i) / max(IQR_i, iqr_floor)`` column-wise."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != stats.median.shape[0]:
        raise DataError(f"errors have {raw.shape[-1]} sensors, stats cover {stats.median.shape[0]}")
    return (raw - stats.median) / np.maximum(stats.iqr, stats.iqr_floor)


def score(val_raw, test_raw, iqr_floor: float = IQR_FLOOR) -> tuple[ErrorScores, ErrorScores]:
    stats = fit_norm_stats(val_raw, iqr_floor)
    return (
        ErrorScores(np.asarray(val_raw), robust_normalize(val_raw, stats), stats, "validation"),
        ErrorScores(np.asarray(test_raw), robust_normalize(test_raw, stats), stats, "test"),
    )


# ---------------------------------------------------------------------------
# threshold rules


def smooth(scores, sma_window: Optional[int]) -> np.ndarray:
    if not sma_window or sma_window == 1:
        return np.asarray(scores, dtype=np.float64)
    return kernels.trailing_mean(scores, sma_window)


def global_threshold_flags(test_norm, val_norm, sma_window: Optional[int] = None):
    """Network flags ``max_i e(i, t) > kappa`` with kappa the validation maximum.

    With ``sma_window`` set, each sensor's test scores are replaced by their
    trailing mean before taking the maximum. Returns ``(flags, kappa, sensor_flags)``,
    the last marking the sensors above kappa (used for localisation).
    """
    val_norm = np.asarray(val_norm, dtype=np.float64)
    if val_norm.size == 0:
        raise DataError("validation scores are empty")
    kappa = float(np.max(val_norm))
    s = smooth(test_norm, sma_window)
    sensor_flags = (s > kappa).astype(np.int8)
    return sensor_flags.max(axis=1, initial=0).astype(np.int8), kappa, sensor_flags


def sensor_thresholds(val_norm, adjacency, tau: float = 99.0) -> np.ndarray:
    """kappa_i: tau-th percentile of validation scores pooled over ``{j: A[j, i] > 0}``."""
    if not 0.0 < tau <= 100.0:
        raise DataError(f"tau must be in (0, 100], got {tau}")
    adjacency = np.asarray(adjacency) > 0
    val_norm = np.asarray(val_norm, dtype=np.float64)
    if adjacency.shape != (val_norm.shape[1],) * 2:
        raise DataError(f"adjacency {adjacency.shape} does not match {val_norm.shape[1]} sensors")
    if not np.all(adjacency.any(axis=0)):
        raise DataError("every sensor needs a non-empty in-neighbourhood")
    return kernels.pooled_percentiles(val_norm, adjacency, tau)


def sensor_threshold_flags(test_norm, val_norm, adjacency, tau: float = 99.0):
    """Per-sensor flags ``e(i, t) > kappa_i``; returns ``(sensor_flags, kappa)``."""
    kappa = sensor_thresholds(val_norm, adjacency, tau)
    return (np.asarray(test_norm) > kappa[None, :]).astype(np.int8), kappa


def positivity_filter_flags(raw_values, sensor_flags) -> np.ndarray:
    """Add a flag wherever the raw (unscaled) reading is negative."""
    raw_values = np.asarray(raw_values)
    sensor_flags = np.asarray(sensor_flags)
    if raw_values.shape != sensor_flags.shape:
        raise DataError(f"values {raw_values.shape} and flags {sensor_flags.shape} differ in shape")
    return ((raw_values < 0) | (sensor_flags > 0)).astype(np.int8)


def network_flags(sensor_flags) -> np.ndarray:
    return np.asarray(sensor_flags).max(axis=1, initial=0).astype(np.int8)


# ---------------------------------------------------------------------------
# evaluation


def confusion(flags, truth) -> dict:
    flags = np.asarray(flags).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if flags.shape != truth.shape:
        raise DataError(f"{flags.shape[0]} flags against {truth.shape[0]} labels")
    return {
        "TP": int(np.sum(flags & truth)),
        "FP": int(np.sum(flags & ~truth)),
        "TN": int(np.sum(~flags & ~truth)),
        "FN": int(np.sum(~flags & truth)),
    }


def metrics_from_counts(counts: dict) -> tuple[dict, list]:
    """Recall, precision, accuracy and specificity; a zero denominator gives 0 and is listed."""
    tp, fp, tn, fn = counts["TP"], counts["FP"], counts["TN"], counts["FN"]
    ratios = {
        "recall": (tp, tp + fn),
        "precision": (tp, tp + fp),
        "accuracy": (tp + tn, tp + tn + fp + fn),
        "specificity": (tn, tn + fp),
    }
    out, undefined = {}, []
    for name, (num, den) in ratios.items():
        if den == 0:
            out[name] = 0.0
            undefined.append(name)
        else:
            out[name] = num / den
    return out, undefined


def localization(sensor_flags, sensor_truth, network_flag, network_truth, adjacency) -> dict:
    """Among network true positives with per-sensor truth, how often the flags hit the right place.

    ``sensor`` is the fraction whose flagged set contains a truly anomalous
    sensor; ``neighborhood`` the fraction whose flagged set meets the
    in-neighbourhood ``{j: A[j, s] > 0}`` of a truly anomalous sensor s.
    """
    sf = np.asarray(sensor_flags) > 0
    st = np.asarray(sensor_truth) > 0
    adjacency = np.asarray(adjacency) > 0
    tp = (np.asarray(network_flag) > 0) & (np.asarray(network_truth) > 0) & st.any(axis=1)
    n_tp = int(tp.sum())
    if n_tp == 0:
        return {"n_true_positives": 0, "sensor": 0.0, "neighborhood": 0.0}
    hit_sensor = np.any(sf[tp] & st[tp], axis=1)
    # reach[t, j]: j lies in the in-neighbourhood of some truly anomalous sensor at t
    reach = (st[tp].astype(np.int64) @ adjacency.T.astype(np.int64)) > 0
    hit_nbhd = np.any(sf[tp] & reach, axis=1)
    return {
        "n_true_positives": n_tp,
        "sensor": float(hit_sensor.mean()),
        "neighborhood": float(hit_nbhd.mean()),
    }


def evaluate(flags, truth, sensor_flags=None, sensor_truth=None, adjacency=None,
             thresholds: Optional[Thresholds] = None, mode: Optional[str] = None) -> DetectionReport:
    """Confusion counts and the four ratios at network level; localisation when per-sensor data is given."""
    flags = np.asarray(flags).astype(np.int8)
    counts = confusion(flags, truth)
    metrics, undefined = metrics_from_counts(counts)
    loc = None
    if sensor_flags is not None and sensor_truth is not None and adjacency is not None:
        loc = localization(sensor_flags, sensor_truth, flags, truth, adjacency)
    return DetectionReport(flags, None if sensor_flags is None else np.asarray(sensor_flags, dtype=np.int8),
                           counts, metrics, undefined, loc, thresholds, mode)


# ---------------------------------------------------------------------------
# end-to-end detection from scores


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 99.0
    sma_window: Optional[int] = None
    iqr_floor: float = IQR_FLOOR


def detect(mode: str, val_norm, test_norm, adjacency=None, raw_test_values=None,
           config: DetectorConfig = DetectorConfig(), network_truth=None, sensor_truth=None) -> DetectionReport:
    """Apply one of the threshold rules to normalised scores and evaluate when labels are given."""
    if mode in ("gdn", "rw_baseline"):
        flags, kappa, sflags = global_threshold_flags(test_norm, val_norm, config.sma_window)
        th = Thresholds("global_max", np.asarray(kappa), None, config.sma_window)
    elif mode in ("gdn_plus", "gdn_plus_plus"):
        if adjacency is None:
            raise DataError(f"mode {mode} needs the learned adjacency")
        sflags, kappa = sensor_threshold_flags(test_norm, val_norm, adjacency, config.tau)
        if mode == "gdn_plus_plus":
            if raw_test_values is None:
                raise DataError("gdn_plus_plus needs the raw test values")
            sflags = positivity_filter_flags(raw_test_values, sflags)
        flags = network_flags(sflags)
        th = Thresholds("sensor_percentile", kappa, config.tau, None)
    else:
        raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")
    if network_truth is None:
        return DetectionReport(flags, sflags, thresholds=th, mode=mode)
    adj = adjacency if adjacency is not None else np.eye(sflags.shape[1], dtype=np.int8)
    return evaluate(flags, network_truth, sflags, sensor_truth, adj if sensor_truth is not None else None, th, mode)


def random_walk_baseline(series: MultivariateSeries, train_frac: float, val_frac: float,
                         config: DetectorConfig = DetectorConfig()) -> tuple[DetectionReport, ErrorScores]:
    """Naive persistence forecast ``yhat(t) = y(t-1)`` scored like the GDN rule.

    The series is split chronologically; min-max scaling is fitted on the
    training block, normalisation statistics and kappa on the validation
    block, and the test block (minus its first tick) is flagged. Labels on
    the test block, when present, are used for evaluation.
    """
    if series.T < 2:
        raise DataError("random-walk baseline needs at least 2 ticks")
    train, val, test = chronological_split(series, train_frac, val_frac)
    return random_walk_from_blocks(train, val, test, config)


def random_walk_from_blocks(train: MultivariateSeries, val: MultivariateSeries, test: MultivariateSeries,
                            config: DetectorConfig = DetectorConfig()) -> tuple[DetectionReport, ErrorScores]:
    """Persistence baseline on pre-split blocks: scale on ``train``, calibrate on ``val``, flag ``test``."""
    if val.T < 2 or test.T < 2:
        raise DataError("validation and test blocks need at least 2 ticks each")
    stats = fit_scaling(train)
    v = scale_values(val.values, stats)
    t = scale_values(test.values, stats)
    val_raw = compute_errors(v[:-1], v[1:])
    test_raw = compute_errors(t[:-1], t[1:])
    val_sc, test_sc = score(val_raw, test_raw, config.iqr_floor)
    truth = None if test.labels is None else test.labels[1:]
    struth = None if test.sensor_labels is None else test.sensor_labels[1:]
    report = detect("rw_baseline", val_sc.normalized, test_sc.normalized, None, None, config, truth, struth)
    return report, test_sc


# ---------------------------------------------------------------------------
# output files


def write_report(report: DetectionReport, path, extra: Optional[dict] = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_flags(path, ticks, report: DetectionReport, sensor_ids: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tick", "network_flag", *sensor_ids])
        sflags = report.sensor_flags
        for k, t in enumerate(ticks):
            row = [int(t), int(report.network_flags[k])]
            if sflags is not None:
                row.extend(int(v) for v in sflags[k])
            else:
                row.extend("" for _ in sensor_ids)
            w.writerow(row)


def read_flags(path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["tick", "network_flag"]:
        raise DataError(f"{path}: expected header 'tick,network_flag,...'")
    body = rows[1:]
    ticks = np.array([int(r[0]) for r in body], dtype=np.int64)
    flags = np.array([int(r[1]) for r in body], dtype=np.int8)
    sflags = None
    if len(rows[0]) > 2 and body and all(c != "" for c in body[0][2:]):
        sflags = np.array([[int(c) for c in r[2:]] for r in body], dtype=np.int8)
    return ticks, flags, sflags


def write_error_trace(path, ticks, scores: np.ndarray, sensor_ids: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tick", *sensor_ids])
        for t, row in zip(ticks, scores):
            w.writerow([int(t), *(format_float(v) for v in row)])
