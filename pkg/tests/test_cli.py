import csv
import json

import numpy as np
import pytest

from riverad import cli
from riverad.config import RunConfig, load_config
from riverad.dataio import load_series
from riverad.errors import ConfigError

SMALL = ["--set", "simulation.n=6", "--set", "simulation.T=300", "--set", "model.max_epochs=3",
         "--set", "model.d=4", "--set", "model.K=2", "--set", "model.hidden_width=8"]


def run(*args):
    return cli.main([str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    root = tmp_path_factory.mktemp("wf")
    for d in ("sim", "inj", "tr", "det"):
        (root / d).mkdir()
    assert run("simulate", "--out", root / "sim", *SMALL) == 0
    assert run("inject", "--series", root / "sim/test.csv", "--out", root / "inj", *SMALL) == 0
    assert run("train", "--series", root / "sim/train.csv", "--out", root / "tr", *SMALL) == 0
    assert run("detect", "--series", root / "inj/series.csv", "--checkpoint", root / "tr/checkpoint.json",
               "--sensor-labels", root / "inj/sensor_labels.csv", "--mode", "gdn_plus", "--out", root / "det",
               *SMALL) == 0
    return root


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.model.K == 5 and cfg.model.w == 3 and cfg.detector.tau == 99.0
        assert cfg.split.train_frac == 0.75 and cfg.simulation.T == 4000

    def test_overrides_and_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 3, "model": {"K": 2}}))
        cfg = load_config(p, ["model.d=5", "simulation.kind=tailup", "detector.sma_window=3"])
        assert (cfg.seed, cfg.model.K, cfg.model.d, cfg.simulation.kind) == (3, 2, 5, "tailup")
        assert cfg.detector.sma_window == 3

    @pytest.mark.parametrize("bad", [["foo=1"], ["model.bogus=1"], ["model=3"], ["noequals"]])
    def test_rejections(self, bad):
        with pytest.raises(ConfigError):
            load_config(None, bad)

    def test_stage_seeds_are_distinct_and_stable(self):
        cfg = RunConfig(seed=7)
        seeds = [cfg.stage_seed(s) for s in ("simulation", "anomaly", "model", "replicate")]
        assert len(set(seeds)) == 4
        assert seeds == [RunConfig(seed=7).stage_seed(s) for s in ("simulation", "anomaly", "model", "replicate")]
        assert cfg.stage_seed("model") != RunConfig(seed=8).stage_seed("model")


class TestCommands:
    def test_simulate_outputs(self, workflow):
        names = sorted(p.name for p in (workflow / "sim").iterdir())
        assert names == ["locations.csv", "metadata.json", "series.csv", "test.csv", "train.csv"]
        assert load_series(workflow / "sim/series.csv").T == 300
        assert load_series(workflow / "sim/train.csv").T == 225

    def test_tailup_writes_network(self, tmp_path):
        assert run("simulate", "--out", tmp_path, *SMALL, "--set", "simulation.kind=tailup") == 0
        assert rows(tmp_path / "network_edges.csv")[0] == ["segment_id", "parent_id", "length"]
        assert rows(tmp_path / "network_placements.csv")[0] == ["sensor_id", "segment_id", "offset"]

    def test_full_size_series(self, tmp_path):
        assert run("simulate", "--out", tmp_path, "--set", "simulation.n=40", "--set", "simulation.T=4000") == 0
        assert len(rows(tmp_path / "series.csv")) == 4001

    def test_inject_outputs(self, workflow):
        recs = rows(workflow / "inj/records.csv")
        assert recs[0] == ["kind", "sensor_id", "start_tick", "length"]
        cfg = RunConfig()
        assert len(recs) - 1 == cfg.anomaly.n_drift + cfg.anomaly.n_var
        assert rows(workflow / "inj/labels.csv")[0] == ["tick", "label"]

    def test_zero_anomalies_leave_series_unchanged(self, workflow, tmp_path):
        assert run("inject", "--series", workflow / "sim/test.csv", "--out", tmp_path,
                   "--set", "anomaly.n_drift=0", "--set", "anomaly.n_var=0") == 0
        assert (tmp_path / "series.csv").read_bytes() == (workflow / "sim/test.csv").read_bytes()

    def test_train_outputs(self, workflow):
        hist = rows(workflow / "tr/loss_history.csv")
        assert hist[0] == ["epoch", "train_loss", "val_loss"] and len(hist) == 4
        doc = json.loads((workflow / "tr/checkpoint.json").read_text())
        assert doc["format"] == "riverad-gdn-checkpoint" and doc["version"] == 1

    def test_detect_report(self, workflow):
        doc = json.loads((workflow / "det/report.json").read_text())
        assert doc["mode"] == "gdn_plus" and doc["threshold"]["tau"] == 99.0
        assert set(doc["metrics"]) == {"recall", "precision", "accuracy", "specificity"}
        assert "localization" in doc
        flags = rows(workflow / "det/flags.csv")
        assert flags[0][:2] == ["tick", "network_flag"] and len(flags[0]) == 2 + 6
        # the first w ticks have no forecast
        assert len(flags) - 1 == 75 - 3

    def test_detect_without_labels(self, workflow, tmp_path):
        assert run("detect", "--series", workflow / "inj/series.csv", "--checkpoint", workflow / "tr/checkpoint.json",
                   "--mode", "gdn", "--out", tmp_path) == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert "metrics" not in doc and "confusion" not in doc
        assert (tmp_path / "flags.csv").exists()

    def test_rw_baseline_needs_no_checkpoint(self, workflow, tmp_path):
        assert run("detect", "--mode", "rw_baseline", "--train", workflow / "sim/train.csv",
                   "--series", workflow / "inj/series.csv", "--labels", workflow / "inj/labels.csv",
                   "--out", tmp_path) == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["mode"] == "rw_baseline" and "metrics" in doc

    def test_evaluate_matches_detect(self, workflow, tmp_path):
        assert run("evaluate", "--flags", workflow / "det/flags.csv", "--labels", workflow / "inj/sensor_labels.csv",
                   "--checkpoint", workflow / "tr/checkpoint.json", "--mode", "gdn_plus", "--out", tmp_path) == 0
        a = json.loads((tmp_path / "report.json").read_text())
        b = json.loads((workflow / "det/report.json").read_text())
        assert a["confusion"] == b["confusion"] and a["localization"] == b["localization"]

    def test_replicate_row_count(self, tmp_path):
        args = ["replicate", "--out", tmp_path, *SMALL, "--set", "replicate.n_replicates=2",
                "--set", "simulation.T=200"]
        assert run(*args) == 0
        reps = rows(tmp_path / "replicates.csv")
        assert len(reps) - 1 == 2 * 2 * 2
        assert len(rows(tmp_path / "comparison.csv")) - 1 == 2 * 2
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_rows"] == 8 and summary["n_datasets"] == 4


class TestExitCodes:
    def test_missing_output_dir(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "missing") == 2

    def test_unknown_config_key(self, tmp_path):
        assert run("simulate", "--out", tmp_path, "--set", "simulation.colour=red") == 1

    def test_bad_config_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert run("simulate", "--config", p, "--out", tmp_path) == 1
        assert run("simulate", "--config", tmp_path / "none.json", "--out", tmp_path) == 1

    def test_bad_mode(self, workflow, tmp_path):
        assert run("detect", "--series", workflow / "inj/series.csv", "--mode", "bogus", "--out", tmp_path) == 1

    def test_missing_input(self, tmp_path):
        assert run("train", "--series", tmp_path / "nope.csv", "--out", tmp_path) == 2

    def test_checkpoint_version_mismatch(self, workflow, tmp_path):
        doc = json.loads((workflow / "tr/checkpoint.json").read_text())
        doc["version"] = 2
        (tmp_path / "ck.json").write_text(json.dumps(doc))
        assert run("detect", "--series", workflow / "inj/series.csv", "--checkpoint", tmp_path / "ck.json",
                   "--out", tmp_path) == 2

    def test_divergence(self, workflow, tmp_path):
        assert run("train", "--series", workflow / "sim/train.csv", "--out", tmp_path, *SMALL,
                   "--set", "model.learning_rate=1e200") == 3


class TestDeterminism:
    @pytest.mark.parametrize("command", ["simulate", "inject", "train", "detect"])
    def test_byte_identical(self, workflow, tmp_path, command):
        extra = {
            "simulate": ["--set", "simulation.kind=tailup"],
            "inject": ["--series", workflow / "sim/test.csv"],
            "train": ["--series", workflow / "sim/train.csv"],
            "detect": ["--series", workflow / "inj/series.csv", "--checkpoint", workflow / "tr/checkpoint.json",
                       "--labels", workflow / "inj/labels.csv", "--mode", "gdn_plus_plus"],
        }[command]
        outs = []
        for k in range(2):
            d = tmp_path / f"run{k}"
            d.mkdir()
            assert run(command, "--out", d, "--seed", 11, *SMALL, *extra) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        assert outs[0] == outs[1]

    def test_seed_changes_output(self, tmp_path):
        for s in (1, 2):
            (tmp_path / str(s)).mkdir()
            assert run("simulate", "--out", tmp_path / str(s), "--seed", s, *SMALL) == 0
        assert (tmp_path / "1/series.csv").read_bytes() != (tmp_path / "2/series.csv").read_bytes()
