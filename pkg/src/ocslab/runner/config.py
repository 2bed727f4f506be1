"""Experiment configuration, read from JSON.

Every section is a small dataclass; unknown keys are rejected so typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..datagen import SHIFT_KINDS
from ..errors import ConfigError
from ..objectives import CE, GAUSSIAN_NLL, MSE_REWARD

DATASETS = ("digits", "blobs", "mnist")
LOSSES = (CE, GAUSSIAN_NLL, MSE_REWARD)


@dataclass
class DataConfig:
    kind: str = "digits"
    # blobs only
    num_classes: int = 10
    dim: int = 64
    per_class: int = 150
    separation: float = 3.0
    # mnist only
    images: str | None = None
    labels: str | None = None
    max_samples: int | None = None
    holdout_frac: float = 0.3


@dataclass
class TrainSection:
    lr: float = 0.05
    batch_size: int = 64
    steps: int = 3000
    weight_decay: float = 0.01


@dataclass
class ShiftSection:
    kind: str = "rotation"
    levels: list[float] = field(default_factory=lambda: [0, 15, 30, 45, 60, 75, 90])


@dataclass
class OodSection:
    steps: int = 500
    lr: float = 0.5
    l2: float = 0.1
    holdout_frac: float = 0.2


@dataclass
class ProbeSection:
    projection_layer: int | None = None
    k: int | None = None
    constants_layer: int | None = None


@dataclass
class PolicySection:
    calibration_frac: float = 0.5
    reward_correct: float = 1.0
    reward_incorrect: float = -4.0
    reward_abstain: float = 0.0


@dataclass
class FlowSection:
    data: str = "separable"  # or "bias_probe"
    depths: list[int] = field(default_factory=lambda: [3, 6])
    width: int = 32
    lr: float = 1e-2
    steps: int = 20_000
    n: int = 64
    dim: int = 8
    margin: float = 0.1
    final_bias: bool = False
    init_scale: float = 1.0
    checkpoints: int = 25


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: DataConfig = field(default_factory=DataConfig)
    loss: str = CE
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    train: TrainSection = field(default_factory=TrainSection)
    shift: ShiftSection = field(default_factory=ShiftSection)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ood: OodSection = field(default_factory=OodSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    policy: PolicySection = field(default_factory=PolicySection)
    flow: FlowSection = field(default_factory=FlowSection)
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.data.kind not in DATASETS:
            raise ConfigError(f"unknown dataset {self.data.kind!r}")
        if self.data.kind == "mnist" and not (self.data.images and self.data.labels):
            raise ConfigError("mnist dataset needs images and labels paths")
        if not 0 < self.data.holdout_frac < 1:
            raise ConfigError("holdout_frac must be in (0, 1)")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.shift.kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.shift.kind!r}")
        levels = list(self.shift.levels)
        if not levels:
            raise ConfigError("shift level grid is empty")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("shift levels must be strictly increasing")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")
        if not 0 < self.policy.calibration_frac < 1:
            raise ConfigError("calibration_frac must be in (0, 1)")
        if self.flow.data not in ("separable", "bias_probe"):
            raise ConfigError(f"unknown flow dataset {self.flow.data!r}")
        if not self.flow.depths or any(d < 2 for d in self.flow.depths):
            raise ConfigError("flow depths must all be >= 2")

    def with_seeds(self, seeds) -> ExperimentConfig:
        return replace(self, seeds=list(seeds))

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "data": DataConfig,
    "train": TrainSection,
    "shift": ShiftSection,
    "ood": OodSection,
    "probe": ProbeSection,
    "policy": PolicySection,
    "flow": FlowSection,
}


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")
    return cls(**raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    for key, cls in _SECTIONS.items():
        if key in raw:
            raw[key] = _build(cls, raw[key], key)
    try:
        return _build(ExperimentConfig, raw, "config")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)
