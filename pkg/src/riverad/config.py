"""Run configuration: one JSON file, nested sections, every field defaulted.

Unknown keys are rejected. ``--set section.key=value`` on the command line
overrides single fields; values are parsed as JSON and fall back to strings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

STAGES = {"simulation": 0, "anomaly": 1, "model": 2, "replicate": 3}


@dataclass
class KernelSection:
    sigma2: float = 1.0
    range_alpha: float = 10.0
    nugget_sigma02: float = 0.0


@dataclass
class SimulationSection:
    n: int = 40
    T: int = 4000
    beta0: float = 5.0
    beta: float = 1.0
    ma_weights: Optional[list] = None
    covariate_kernel: KernelSection = field(default_factory=lambda: KernelSection(1.0, 10.0, 0.0))
    effect_kernel: KernelSection = field(default_factory=lambda: KernelSection(3.0, 10.0, 0.5))
    kind: str = "euclidean"
    branch_prob: float = 0.8
    depth: int = 5


@dataclass
class SplitSection:
    train_frac: float = 0.75
    val_frac: float = 0.1  # tail of the training block held out for validation


@dataclass
class AnomalySection:
    n_drift: int = 5
    n_var: int = 24
    lambda_drift: float = 11.0
    lambda_var: float = 3.0
    delta: float = 4.5
    zeta: float = 13.5


@dataclass
class ModelSection:
    w: int = 3
    d: int = 16
    K: int = 5
    leaky_slope: float = 0.2
    hidden_width: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    adjacency_update: str = "epoch"
    candidate_sets: Optional[list] = None


@dataclass
class DetectorSection:
    tau: float = 99.0
    sma_window: Optional[int] = None
    iqr_floor: float = 1e-2


@dataclass
class RangesSection:
    delta: list = field(default_factory=lambda: [3.0, 6.0])
    zeta: list = field(default_factory=lambda: [12.0, 15.0])
    lambda_drift: list = field(default_factory=lambda: [5.0, 10.0])
    lambda_var: list = field(default_factory=lambda: [2.0, 10.0])
    n_drift: list = field(default_factory=lambda: [50, 100])
    n_var: list = field(default_factory=lambda: [50, 100])
    sigma2: list = field(default_factory=lambda: [1.0, 5.0])
    alpha: list = field(default_factory=lambda: [5.0, 15.0])
    sigma02: list = field(default_factory=lambda: [0.0, 1.0])
    beta0: list = field(default_factory=lambda: [1.0, 10.0])
    beta1: list = field(default_factory=lambda: [1.0, 10.0])


@dataclass
class ReplicateSection:
    n_replicates: int = 10
    kinds: list = field(default_factory=lambda: ["euclidean", "tailup"])
    modes: list = field(default_factory=lambda: ["gdn", "gdn_plus"])
    ranges: RangesSection = field(default_factory=RangesSection)


@dataclass
class PathsSection:
    series: Optional[str] = None
    train: Optional[str] = None
    labels: Optional[str] = None
    sensor_labels: Optional[str] = None
    checkpoint: Optional[str] = None
    flags: Optional[str] = None


@dataclass
class RunConfig:
    seed: int = 0
    simulation: SimulationSection = field(default_factory=SimulationSection)
    split: SplitSection = field(default_factory=SplitSection)
    anomaly: AnomalySection = field(default_factory=AnomalySection)
    model: ModelSection = field(default_factory=ModelSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    replicate: ReplicateSection = field(default_factory=ReplicateSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def stage_seed(self, stage: str) -> int:
        """Deterministic 32-bit seed for one pipeline stage, derived from the master seed."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(STAGES[stage],))
        return int(ss.generate_state(1)[0])


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)


def apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = value
