"""Glue for simulate -> split -> inject -> train -> detect runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import anomgen, detector, model, simgen
from .dataio import MultivariateSeries, chronological_split, fit_scaling, scale_values, window_arrays
from .errors import ConfigError, DataError


def split_train_val(train: MultivariateSeries, val_frac: float):
    """Hold out the last ``floor(val_frac * T)`` ticks of a training block for validation."""
    if not 0.0 < val_frac < 1.0:
        raise ConfigError(f"val_frac must be in (0, 1), got {val_frac}")
    n_val = int(math.floor(val_frac * train.T))
    return train.slice(0, train.T - n_val), train.slice(train.T - n_val, train.T)


def fit(train: MultivariateSeries, hp: model.GdnHyperparams, val_frac: float = 0.1) -> model.FittedModel:
    """Scale on the fitting block, train, and store raw validation errors on the model."""
    fit_block, val_block = split_train_val(train, val_frac)
    stats = fit_scaling(fit_block)
    tr = window_arrays(scale_values(fit_block.values, stats), hp.w)
    va = window_arrays(scale_values(val_block.values, stats), hp.w)
    fitted = model.train(tr, va, hp, train.sensor_ids, stats)
    fitted.validation_errors = raw_errors(fitted, val_block)
    return fitted


def raw_errors(fitted: model.FittedModel, series: MultivariateSeries) -> np.ndarray:
    """Absolute one-step errors in scaled units for ticks w+1..T of ``series``."""
    scaled = scale_values(series.values, fitted.scaling) if fitted.scaling is not None else series.values
    pred = model.predict_scaled(fitted, scaled)
    return detector.compute_errors(pred, scaled[fitted.hyperparams.w :])


def detect_series(fitted: model.FittedModel, test: MultivariateSeries, mode: str,
                  config: detector.DetectorConfig = detector.DetectorConfig()):
    """Score ``test`` with a fitted model and apply one threshold rule.

    Returns ``(report, test_scores, ticks)``; evaluation happens when ``test``
    carries labels. The first w ticks have no forecast and are not scored.
    """
    if fitted.validation_errors is None:
        raise DataError("model carries no validation errors; fit it with pipeline.fit")
    w = fitted.hyperparams.w
    val_sc, test_sc = detector.score(fitted.validation_errors, raw_errors(fitted, test), config.iqr_floor)
    truth = None if test.labels is None else test.labels[w:]
    struth = None if test.sensor_labels is None else test.sensor_labels[w:]
    report = detector.detect(mode, val_sc.normalized, test_sc.normalized, fitted.adjacency,
                             test.values[w:], config, truth, struth)
    return report, test_sc, test.tick_index[w:]


@dataclass
class ExperimentResult:
    kind: str
    sim_config: simgen.SimConfig
    anomaly_config: anomgen.AnomalyConfig
    test: MultivariateSeries
    records: list
    fitted: model.FittedModel
    reports: dict = field(default_factory=dict)

    @property
    def proportion_anomalous(self) -> float:
        return anomgen.proportion_anomalous(self.test.labels)


def make_dataset(sim_cfg: simgen.SimConfig, anom_cfg: anomgen.AnomalyConfig, train_frac: float = 0.75,
                 **shared):
    """Simulate, split chronologically and contaminate only the test block."""
    sim = simgen.simulate(sim_cfg, **shared)
    train, _, test = chronological_split(sim.series, train_frac, 0.0)
    test, records = anomgen.inject(test, anom_cfg)
    return sim, train, test, records


def run_experiment(sim_cfg: simgen.SimConfig, anom_cfg: anomgen.AnomalyConfig, hp: model.GdnHyperparams,
                   train_frac: float = 0.75, val_frac: float = 0.1,
                   det_cfg: detector.DetectorConfig = detector.DetectorConfig(),
                   modes: Sequence[str] = ("gdn", "gdn_plus"), **shared) -> ExperimentResult:
    _, train, test, records = make_dataset(sim_cfg, anom_cfg, train_frac, **shared)
    fitted = fit(train, hp, val_frac)
    result = ExperimentResult(sim_cfg.kind, sim_cfg, anom_cfg, test, records, fitted)
    for mode in modes:
        result.reports[mode], _, _ = detect_series(fitted, test, mode, det_cfg)
    return result


# ---------------------------------------------------------------------------
# replication study


REPLICATION_RANGES = {
    "delta": (3.0, 6.0),
    "zeta": (12.0, 15.0),
    "lambda_drift": (5.0, 10.0),
    "lambda_var": (2.0, 10.0),
    "n_drift": (50, 100),
    "n_var": (50, 100),
    "sigma2": (1.0, 5.0),
    "alpha": (5.0, 15.0),
    "sigma02": (0.0, 1.0),
    "beta0": (1.0, 10.0),
    "beta1": (1.0, 10.0),
}

_INTEGER_KEYS = ("n_drift", "n_var")


def sample_replicate_params(rng: np.random.Generator, ranges: Optional[dict] = None) -> dict:
    """Draw every parameter uniformly from its range (integers inclusive of both ends)."""
    ranges = {**REPLICATION_RANGES, **(ranges or {})}
    unknown = set(ranges) - set(REPLICATION_RANGES)
    if unknown:
        raise ConfigError(f"unknown replication range keys {sorted(unknown)}")
    out = {}
    for key in REPLICATION_RANGES:
        lo, hi = ranges[key]
        if hi < lo:
            raise ConfigError(f"range for {key} is empty: [{lo}, {hi}]")
        if key in _INTEGER_KEYS:
            out[key] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            out[key] = float(rng.uniform(lo, hi))
    return out


def replicate_configs(master_seed: int, index: int, base_sim: simgen.SimConfig,
                      base_anom: anomgen.AnomalyConfig, ranges: Optional[dict] = None):
    """Sampled parameters and per-stage seeds for replicate ``index``.

    The Euclidean and tail-up datasets of one replicate share locations,
    covariate fields and anomaly settings; only the random-effect kernel differs.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    p_seq, sim_seq, anom_seq = ss.spawn(3)
    params = sample_replicate_params(np.random.default_rng(p_seq), ranges)
    sim_seed = int(sim_seq.generate_state(1)[0])
    kern = simgen.KernelParams(params["sigma2"], params["alpha"], params["sigma02"])
    sim_cfg = replace(
        base_sim,
        beta0=params["beta0"],
        beta=params["beta1"],
        covariate_kernel=simgen.KernelParams(params["sigma2"], params["alpha"], 0.0),
        effect_kernel=kern,
        seed=sim_seed,
    )
    anom_cfg = replace(
        base_anom,
        n_drift=params["n_drift"],
        n_var=params["n_var"],
        lambda_drift=params["lambda_drift"],
        lambda_var=params["lambda_var"],
        delta=params["delta"],
        zeta=params["zeta"],
        seed=int(anom_seq.generate_state(1)[0]),
    )
    return params, sim_cfg, anom_cfg


def run_replicate(master_seed: int, index: int, base_sim: simgen.SimConfig, base_anom: anomgen.AnomalyConfig,
                  hp: model.GdnHyperparams, kinds: Sequence[str] = ("euclidean", "tailup"),
                  train_frac: float = 0.75, val_frac: float = 0.1,
                  det_cfg: detector.DetectorConfig = detector.DetectorConfig(),
                  modes: Sequence[str] = ("gdn", "gdn_plus"), ranges: Optional[dict] = None):
    params, sim_cfg, anom_cfg = replicate_configs(master_seed, index, base_sim, base_anom, ranges)
    net = simgen.build_river_network(sim_cfg.n, sim_cfg.branch_prob, sim_cfg.depth,
                                     simgen._stream(sim_cfg.seed, "network"))
    coords = net.sensor_coords()
    cov_x = simgen.euclidean_covariance(coords, sim_cfg.covariate_kernel)
    covariates = simgen.sample_field_series(cov_x, sim_cfg.T, sim_cfg.phi, simgen._stream(sim_cfg.seed, "covariates"),
                                            sim_cfg.covariate_kernel.sigma2)
    results = {}
    for kind in kinds:
        cfg = replace(sim_cfg, kind=kind)
        results[kind] = run_experiment(cfg, anom_cfg, hp, train_frac, val_frac, det_cfg, modes,
                                       network=net, coords=coords, covariates=covariates)
    return params, results
