"""Drift and high-variability subsequence anomalies."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import MultivariateSeries
from .errors import ConfigError, DataError

KINDS = ("drift", "variability")


@dataclass(frozen=True)
class AnomalyConfig:
    n_drift: int = 5
    n_var: int = 24
    lambda_drift: float = 11.0
    lambda_var: float = 3.0
    delta: float = 4.5
    zeta: float = 13.5
    seed: int = 0

    def __post_init__(self):
        if self.n_drift < 0 or self.n_var < 0:
            raise ConfigError("anomaly counts must be >= 0")
        if not (self.lambda_drift > 0 and self.lambda_var > 0):
            raise ConfigError("expected anomaly lengths must be > 0")
        if self.zeta < 0:
            raise ConfigError("zeta must be >= 0")


@dataclass(frozen=True)
class AnomalyRecord:
    kind: str
    sensor: str
    start_tick: int  # 1-based position within the series
    length: int  # drawn length, before clipping at the series end


def inject(series: MultivariateSeries, config: AnomalyConfig):
    """Add drift then variability anomalies to ``series``.

    For each anomaly a sensor, a 1-based start position ``t`` and a length
    ``L ~ Poisson(lambda)`` are drawn; drift adds ``(delta, 2*delta, ...,
    L*delta)`` and variability adds ``N(0, zeta^2)`` noise to positions
    ``t .. t+L-1`` of that sensor. Additions past the end are dropped,
    overlapping anomalies add up, and labels are the union of touched cells.

    Returns ``(contaminated_series, records)``; the returned series carries
    both network and per-sensor labels.
    """
    if series.T == 0 or series.n == 0:
        raise DataError("cannot inject anomalies into an empty series")
    rng = np.random.default_rng(config.seed)
    t_len, n = series.values.shape
    values = series.values.copy()
    touched = np.zeros((t_len, n), dtype=np.int8)
    records = []
    plan = (("drift", config.n_drift, config.lambda_drift), ("variability", config.n_var, config.lambda_var))
    for kind, count, lam in plan:
        for _ in range(count):
            sensor = int(rng.integers(0, n))
            start = int(rng.integers(1, t_len + 1))
            length = int(rng.poisson(lam))
            if kind == "drift":
                add = config.delta * np.arange(1, length + 1)
            else:
                add = rng.normal(0.0, config.zeta, size=length)
            lo = start - 1
            hi = min(lo + length, t_len)
            values[lo:hi, sensor] += add[: hi - lo]
            touched[lo:hi, sensor] = 1
            records.append(AnomalyRecord(kind, series.sensor_ids[sensor], start, length))
    out = MultivariateSeries(values, series.tick_index.copy(), series.sensor_ids, None, touched)
    return out, records


def proportion_anomalous(labels) -> float:
    """Fraction of ticks whose network label is 1 (2-D input is reduced with OR over sensors)."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.max(axis=1, initial=0)
    if labels.size == 0:
        return 0.0
    return float(np.mean(labels == 1))


def write_records(records, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "sensor_id", "start_tick", "length"])
        for r in records:
            w.writerow([r.kind, r.sensor, r.start_tick, r.length])


def read_records(path) -> list[AnomalyRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            AnomalyRecord(r["kind"], r["sensor_id"], int(r["start_tick"]), int(r["length"]))
            for r in csv.DictReader(fh)
        ]
