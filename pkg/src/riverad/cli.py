"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 I/O or data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import anomgen, detector, model, pipeline, simgen
from .config import RunConfig, load_config
from .dataio import (
    MultivariateSeries,
    attach_labels,
    chronological_split,
    format_float,
    load_labels,
    load_series,
    write_labels,
    write_series,
)
from .errors import ConfigError, DataError, NumericalError

log = logging.getLogger("riverad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# config -> library objects


def sim_config(cfg: RunConfig, seed: Optional[int] = None) -> simgen.SimConfig:
    s = cfg.simulation
    return simgen.SimConfig(
        n=s.n, T=s.T, beta0=s.beta0, beta=s.beta, ma_weights=s.ma_weights,
        covariate_kernel=simgen.KernelParams(**asdict(s.covariate_kernel)),
        effect_kernel=simgen.KernelParams(**asdict(s.effect_kernel)),
        kind=s.kind, branch_prob=s.branch_prob, depth=s.depth,
        seed=cfg.stage_seed("simulation") if seed is None else seed,
    )


def anomaly_config(cfg: RunConfig) -> anomgen.AnomalyConfig:
    return anomgen.AnomalyConfig(**asdict(cfg.anomaly), seed=cfg.stage_seed("anomaly"))


def hyperparams(cfg: RunConfig) -> model.GdnHyperparams:
    return model.GdnHyperparams(**asdict(cfg.model), seed=cfg.stage_seed("model"))


def detector_config(cfg: RunConfig) -> detector.DetectorConfig:
    d = cfg.detector
    return detector.DetectorConfig(tau=d.tau, sma_window=d.sma_window, iqr_floor=d.iqr_floor)


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required")
    out = Path(args.out)
    if not out.is_dir():
        raise DataError(f"output directory does not exist: {out}")
    return out


def _path(value: Optional[str], what: str) -> Path:
    if value is None:
        raise ConfigError(f"no {what} given (use the flag or paths.{what} in the config)")
    return Path(value)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _labelled(series: MultivariateSeries, labels: Optional[str], sensor_labels: Optional[str]):
    if sensor_labels is not None:
        series = attach_labels(series, sensor_labels)
    if labels is not None:
        _, lab, slab = load_labels(labels, series)
        if lab is None:
            series = series.with_labels(None, slab)
        elif series.sensor_labels is None:
            series = series.with_labels(lab, None)
        elif not np.array_equal(lab, series.labels):
            raise DataError(f"{labels}: network labels disagree with the per-sensor labels")
    return series


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    sc = sim_config(cfg)
    sim = simgen.simulate(sc)
    train, _, test = chronological_split(sim.series, cfg.split.train_frac, 0.0)
    write_series(sim.series, out / "series.csv")
    write_series(train, out / "train.csv")
    write_series(test, out / "test.csv")
    with (out / "locations.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "x", "y"])
        for sid, (x, y) in zip(sim.series.sensor_ids, sim.coords):
            w.writerow([sid, format_float(x), format_float(y)])
    if sim.network is not None:
        simgen.write_network(sim.network, out / "network_edges.csv", out / "network_placements.csv")
    _write_json(out / "metadata.json", {
        "master_seed": cfg.seed,
        "simulation": sc.to_dict(),
        "split": {"train_frac": cfg.split.train_frac, "train_ticks": train.T, "test_ticks": test.T},
        "random_effect": [float(v) for v in sim.random_effect],
    })
    return EXIT_OK


def cmd_inject(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    series = load_series(_path(cfg.paths.series, "series"))
    ac = anomaly_config(cfg)
    contaminated, records = anomgen.inject(series, ac)
    write_series(contaminated, out / "series.csv")
    write_labels(contaminated.tick_index, contaminated.labels, out / "labels.csv")
    write_labels(contaminated.tick_index, contaminated.sensor_labels, out / "sensor_labels.csv",
                 contaminated.sensor_ids)
    anomgen.write_records(records, out / "records.csv")
    _write_json(out / "anomaly_metadata.json", {
        "master_seed": cfg.seed,
        "anomaly": asdict(ac),
        "proportion_anomalous": anomgen.proportion_anomalous(contaminated.labels),
    })
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    series = load_series(_path(cfg.paths.train or cfg.paths.series, "train"))
    fitted = pipeline.fit(series, hyperparams(cfg), cfg.split.val_frac)
    model.save_checkpoint(fitted, out / "checkpoint.json")
    with (out / "loss_history.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in fitted.history:
            w.writerow([row["epoch"], format_float(row["train_loss"]), format_float(row["val_loss"])])
    return EXIT_OK


def cmd_detect(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    mode = args.mode
    if mode not in detector.MODES:
        raise ConfigError(f"--mode must be one of {detector.MODES}, got {mode!r}")
    test = load_series(_path(cfg.paths.series, "series"))
    test = _labelled(test, cfg.paths.labels, cfg.paths.sensor_labels)
    det_cfg = detector_config(cfg)
    if mode == "rw_baseline":
        train = load_series(_path(cfg.paths.train, "train"))
        if train.sensor_ids != test.sensor_ids:
            raise DataError("training and test series have different sensors")
        fit_block, val_block = pipeline.split_train_val(train, cfg.split.val_frac)
        report, scores = detector.random_walk_from_blocks(fit_block, val_block, test, det_cfg)
        ticks = test.tick_index[1:]
    else:
        fitted = model.load_checkpoint(_path(cfg.paths.checkpoint, "checkpoint"))
        if fitted.sensor_ids and tuple(fitted.sensor_ids) != test.sensor_ids:
            raise DataError("test series sensors do not match the checkpoint")
        report, scores, ticks = pipeline.detect_series(fitted, test, mode, det_cfg)
    detector.write_report(report, out / "report.json")
    detector.write_flags(out / "flags.csv", ticks, report, test.sensor_ids)
    detector.write_error_trace(out / "errors.csv", ticks, scores.normalized, test.sensor_ids)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    ticks, flags, sflags = detector.read_flags(_path(cfg.paths.flags, "flags"))
    truth = struth = None
    if cfg.paths.sensor_labels is not None:
        lt, _, struth_all = load_labels(cfg.paths.sensor_labels)
        struth = _align(ticks, lt, struth_all)
        truth = struth.max(axis=1)
    if cfg.paths.labels is not None:
        lt, lab, slab = load_labels(cfg.paths.labels)
        if lab is None:
            struth = _align(ticks, lt, slab)
            truth = struth.max(axis=1)
        else:
            truth = _align(ticks, lt, lab)
    if truth is None:
        raise ConfigError("evaluate needs --labels or --sensor-labels")
    adjacency = None
    if cfg.paths.checkpoint is not None:
        adjacency = model.load_checkpoint(cfg.paths.checkpoint).adjacency
    elif sflags is not None:
        adjacency = np.eye(sflags.shape[1], dtype=np.int8)
    if sflags is not None and struth is not None and sflags.shape != struth.shape:
        raise DataError(f"flags cover {sflags.shape[1]} sensors, labels {struth.shape[1]}")
    report = detector.evaluate(flags, truth, sflags, struth, adjacency, mode=args.mode)
    detector.write_report(report, out / "report.json")
    return EXIT_OK


def _align(ticks, label_ticks, labels):
    pos = {int(t): k for k, t in enumerate(label_ticks)}
    missing = [int(t) for t in ticks if int(t) not in pos]
    if missing:
        raise DataError(f"labels lack tick {missing[0]} present in the flags")
    return np.asarray(labels)[[pos[int(t)] for t in ticks]]


def cmd_replicate(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    rep = cfg.replicate
    for m in rep.modes:
        if m not in ("gdn", "gdn_plus", "gdn_plus_plus"):
            raise ConfigError(f"replicate.modes: unsupported mode {m!r}")
    for k in rep.kinds:
        if k not in simgen.KINDS:
            raise ConfigError(f"replicate.kinds: unknown kind {k!r}")
    base_sim = sim_config(cfg)
    base_anom = anomaly_config(cfg)
    hp = hyperparams(cfg)
    det_cfg = detector_config(cfg)
    ranges = {k: tuple(v) for k, v in asdict(rep.ranges).items()}
    master = cfg.stage_seed("replicate")
    rows, param_rows = [], []
    for idx in range(rep.n_replicates):
        params, results = pipeline.run_replicate(master, idx, base_sim, base_anom, hp, rep.kinds,
                                                 cfg.split.train_frac, cfg.split.val_frac, det_cfg,
                                                 rep.modes, ranges)
        param_rows.append({"replicate": idx, **params})
        for kind in rep.kinds:
            res = results[kind]
            for mode in rep.modes:
                r = res.reports[mode]
                rows.append({"replicate": idx, "kind": kind, "mode": mode, **r.counts,
                             **{m: r.metrics[m] for m in detector.METRICS},
                             "proportion_anomalous": res.proportion_anomalous})
    _write_rows(out / "replicates.csv", rows)
    _write_rows(out / "replicate_params.csv", param_rows)
    summary = _compare(rows, rep.kinds) if {"gdn", "gdn_plus"} <= set(rep.modes) else []
    if summary:
        _write_rows(out / "comparison.csv", summary)
    _write_json(out / "summary.json", {
        "n_replicates": rep.n_replicates,
        "kinds": list(rep.kinds),
        "modes": list(rep.modes),
        "n_rows": len(rows),
        "fn_plus_le_gdn": sum(r["fn_plus_le_gdn"] for r in summary),
        "fp_plus_ge_gdn": sum(r["fp_plus_ge_gdn"] for r in summary),
        "n_datasets": len(summary),
    })
    return EXIT_OK


def _compare(rows, kinds):
    by = {(r["replicate"], r["kind"], r["mode"]): r for r in rows}
    out = []
    for (idx, kind, mode) in sorted(by, key=lambda k: (k[0], list(kinds).index(k[1]))):
        if mode != "gdn":
            continue
        g, p = by[(idx, kind, "gdn")], by[(idx, kind, "gdn_plus")]
        out.append({"replicate": idx, "kind": kind, "FN_gdn": g["FN"], "FN_gdn_plus": p["FN"],
                    "FP_gdn": g["FP"], "FP_gdn_plus": p["FP"],
                    "fn_plus_le_gdn": int(p["FN"] <= g["FN"]), "fp_plus_ge_gdn": int(p["FP"] >= g["FP"])})
    return out


def _write_rows(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([format_float(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


COMMANDS = {
    "simulate": cmd_simulate,
    "inject": cmd_inject,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "replicate": cmd_replicate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riverad", description="Simulate river sensor networks, "
                                     "train a graph-attention forecaster and flag anomalies.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="existing output directory")
    parser.add_argument("--mode", default="gdn", help=f"threshold rule, one of {', '.join(detector.MODES)}")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field, e.g. model.K=3 (repeatable)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--series", help="input series CSV (simulated or test data)")
    parser.add_argument("--train", help="training series CSV")
    parser.add_argument("--labels", help="network or per-sensor labels CSV")
    parser.add_argument("--sensor-labels", help="per-sensor labels CSV")
    parser.add_argument("--checkpoint", help="trained model checkpoint")
    parser.add_argument("--flags", help="flags CSV written by detect")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    for name in ("series", "train", "labels", "sensor_labels", "checkpoint", "flags"):
        value = getattr(args, name)
        if value is not None:
            overrides.append(f"paths.{name}={json.dumps(value)}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, ValueError) as exc:
        # bad field types or values caught by the library's own validation
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
