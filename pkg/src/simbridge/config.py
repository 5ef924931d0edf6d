"""Run configuration as flat JSON with dotted keys.

Every section is one of the module configuration dataclasses; a key like
``"train.lr"`` addresses field ``lr`` of section ``train``. Files are written
UTF-8 with sorted keys and floats printed with 17 significant digits, so
load -> dump -> load is a fixed point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augmentation import JitterConfig
from .detector.features import BevGridConfig
from .detector.losses import LossWeights
from .detector.network import DetectorConfig
from .detector.train import TrainConfig
from .evaluation.metrics import MatchConfig
from .geometry import PartitionConfig
from .simulator import DEFAULT_CLASSES, DatasetSpec, DomainParams, LidarModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    sim: str = ""
    real_train: str = ""
    real_val: str = ""


@dataclass(frozen=True)
class DetectorOptions:
    d_feat: int = 32
    domain_aware: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Dataset sizes and protocol knobs for the ablation and corner-case harness."""

    n_sim: int = 800
    n_real_train: int = 500
    n_real_val: int = 150
    real_fraction: float = 0.025
    sim_fraction: float = 1.0
    heldout_class: int = 3
    score_threshold: float = 0.05
    nms_radius: float = 1.0
    workers: int = 1
    sim_seed_offset: int = 1000
    real_train_seed_offset: int = 100000
    real_val_seed_offset: int = 200000


SECTIONS = {
    "paths": PathsConfig,
    "lidar": LidarModel,
    "sim": DomainParams,
    "real": DomainParams,
    "jitter": JitterConfig,
    "partition": PartitionConfig,
    "grid": BevGridConfig,
    "detector": DetectorOptions,
    "loss": LossWeights,
    "train": TrainConfig,
    "match": MatchConfig,
    "experiment": ExperimentConfig,
}


def _default_real() -> DomainParams:
    # pseudo-real sensor noise defaults to the jitter magnitudes
    j = JitterConfig()
    return DomainParams(domain="real", sensor_noise=(j.delta_r, j.delta_theta, j.delta_phi),
                        intensity=True, deform_shapes=True)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    lidar: LidarModel = LidarModel()
    sim: DomainParams = DomainParams(domain="sim")
    real: DomainParams = field(default_factory=_default_real)
    jitter: JitterConfig = JitterConfig()
    partition: PartitionConfig = PartitionConfig(n_cls=len(DEFAULT_CLASSES))
    grid: BevGridConfig = BevGridConfig()
    detector: DetectorOptions = DetectorOptions()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    match: MatchConfig = MatchConfig()
    experiment: ExperimentConfig = ExperimentConfig()

    def __post_init__(self):
        if self.sim.domain != "sim" or self.real.domain != "real":
            raise ConfigError("sim.domain must be 'sim' and real.domain must be 'real'")
        if self.partition.n_cls != len(DEFAULT_CLASSES):
            raise ConfigError(f"partition.n_cls must equal the class count ({len(DEFAULT_CLASSES)})")

    # -------------------------------------------------------------- derived configs
    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(self.grid, self.detector.d_feat, len(DEFAULT_CLASSES),
                              domain_aware=self.detector.domain_aware)

    def dataset_spec(self, domain: str) -> DatasetSpec:
        return DatasetSpec(self.sim if domain == "sim" else self.real, self.lidar)

    def with_overrides(self, flat: dict) -> "RunConfig":
        merged = to_flat(self)
        merged.update(flat)
        return from_flat(merged)

    # -------------------------------------------------------------- I/O
    def dumps(self) -> str:
        return dumps_flat(to_flat(self))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return RunConfig().with_overrides(data)


def to_flat(cfg: RunConfig) -> dict:
    out = {"seed": cfg.seed}
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in fields(obj):
            v = getattr(obj, f.name)
            out[f"{sec}.{f.name}"] = list(v) if isinstance(v, tuple) else v
    return out


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        items = list(value)
        if default:
            items = [_coerce(key, v, default[0]) if isinstance(default[0], (int, float)) and
                     not isinstance(default[0], bool) and isinstance(v, (int, float)) else v
                     for v in items]
        return tuple(items)
    return value


def from_flat(flat: dict) -> RunConfig:
    base = RunConfig()
    sections = {sec: {} for sec in SECTIONS}
    seed = base.seed
    for key, value in flat.items():
        if key == "seed":
            seed = _coerce(key, value, 0)
            continue
        sec, _, name = key.partition(".")
        if sec not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(base, sec)
        names = {f.name for f in fields(obj)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        sections[sec][name] = _coerce(key, value, getattr(obj, name))
    kwargs = {"seed": seed}
    try:
        for sec, over in sections.items():
            kwargs[sec] = replace(getattr(base, sec), **over) if over else getattr(base, sec)
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ConfigError("non-finite floats cannot be serialized")
        s = "%.17g" % v
        if not any(ch in s for ch in ".en"):
            s += ".0"
        return s
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def dumps_flat(flat: dict) -> str:
    lines = [f"  {json.dumps(k)}: {_fmt(flat[k])}" for k in sorted(flat)]
    return "{\n" + ",\n".join(lines) + "\n}\n"
