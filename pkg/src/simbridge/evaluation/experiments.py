"""Ablation and corner-case harness on the two-domain toy benchmark.

Each ablation row is the base :class:`RunConfig` plus a small set of flat
overrides drawn only from :data:`TOGGLE_KEYS`; :func:`audit_rows` checks that
the resolved configurations differ in nothing else.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..config import RunConfig, to_flat
from ..datasets import Dataset, DatasetMissing, load_dataset
from ..detector.predict import predict
from ..detector.train import Trainer
from ..simulator import DEFAULT_CLASSES, generate_dataset
from .metrics import EvalReport, evaluate, flatten

log = logging.getLogger(__name__)

CLASS_NAMES = tuple(c.name for c in DEFAULT_CLASSES)
TOGGLE_KEYS = ("experiment.sim_fraction", "detector.domain_aware", "train.use_sma",
               "train.use_jitter")

ABLATION_ROWS = (
    ("real_only", {"experiment.sim_fraction": 0.0, "detector.domain_aware": True,
                   "train.use_sma": False, "train.use_jitter": False}),
    ("naive_joint", {"experiment.sim_fraction": 1.0, "detector.domain_aware": False,
                     "train.use_sma": False, "train.use_jitter": False}),
    ("domain_aware", {"experiment.sim_fraction": 1.0, "detector.domain_aware": True,
                      "train.use_sma": False, "train.use_jitter": False}),
    ("domain_aware_sma", {"experiment.sim_fraction": 1.0, "detector.domain_aware": True,
                          "train.use_sma": True, "train.use_jitter": False}),
    ("full", {"experiment.sim_fraction": 1.0, "detector.domain_aware": True,
              "train.use_sma": True, "train.use_jitter": True}),
    ("full_half_sim", {"experiment.sim_fraction": 0.5, "detector.domain_aware": True,
                       "train.use_sma": True, "train.use_jitter": True}),
)


def toy_benchmark_config(seed: int = 0) -> RunConfig:
    """Fixed benchmark: pseudo-real noise well above the simulator's zero noise,
    with sim-side jitter matched to it."""
    noise = [0.05, 0.003, 0.003]
    return RunConfig().with_overrides({
        "seed": seed,
        "real.sensor_noise": noise,
        "jitter.delta_r": noise[0], "jitter.delta_theta": noise[1], "jitter.delta_phi": noise[2],
        "train.seed": seed,
    })


# ---------------------------------------------------------------------- datasets
@dataclass
class BenchmarkData:
    sim: Dataset
    real_train: Dataset
    real_val: Dataset


def dataset_paths(cfg: RunConfig, root=None) -> dict:
    if root is not None:
        root = Path(root)
        return {"sim": root / "sim", "real_train": root / "real_train", "real_val": root / "real_val"}
    return {"sim": Path(cfg.paths.sim), "real_train": Path(cfg.paths.real_train),
            "real_val": Path(cfg.paths.real_val)}


def generate_benchmark(cfg: RunConfig, root, workers: int | None = None) -> dict:
    """Generate the three datasets under ``root``; returns their paths."""
    ex = cfg.experiment
    workers = ex.workers if workers is None else workers
    paths = dataset_paths(cfg, root)
    jobs = (("sim", ex.n_sim, cfg.dataset_spec("sim"), ex.sim_seed_offset),
            ("real_train", ex.n_real_train, cfg.dataset_spec("real"), ex.real_train_seed_offset),
            ("real_val", ex.n_real_val, cfg.dataset_spec("real"), ex.real_val_seed_offset))
    for key, n, spec, offset in jobs:
        generate_dataset(paths[key], n, spec, cfg.seed + offset, workers)
    return paths


def load_benchmark(cfg: RunConfig, root=None) -> BenchmarkData:
    paths = dataset_paths(cfg, root)
    for key, p in paths.items():
        if not str(p) or str(p) == ".":
            raise DatasetMissing(f"paths.{key} is not set; pass --data or set it in the config")
    return BenchmarkData(load_dataset(paths["sim"]), load_dataset(paths["real_train"]),
                         load_dataset(paths["real_val"]))


# ---------------------------------------------------------------------- one run
@dataclass
class RunResult:
    name: str
    report: EvalReport
    train_seconds: float
    eval_seconds: float
    config: RunConfig
    trainer: Trainer | None = None


def train_and_eval(cfg: RunConfig, real: Dataset | None, sim: Dataset | None, val: Dataset,
                   name: str = "run", keep_trainer: bool = False) -> RunResult:
    t0 = time.perf_counter()
    trainer = Trainer(real, sim, cfg.detector_config(), cfg.train, cfg.loss, cfg.jitter, cfg.partition)
    result = trainer.run(log_every=0)
    t1 = time.perf_counter()
    report = evaluate_model(result.model, val, cfg)
    t2 = time.perf_counter()
    log.info("%s: mAP %.4f (train %.0fs, eval %.0fs)", name, report.mAP, t1 - t0, t2 - t1)
    return RunResult(name, report, t1 - t0, t2 - t1, cfg, trainer if keep_trainer else None)


def evaluate_model(model, val: Dataset, cfg: RunConfig) -> EvalReport:
    ex = cfg.experiment
    dets = [predict(c, model, ex.score_threshold, ex.nms_radius, cfg.train.sim_timestamp)
            for c in val.clouds]
    preds, gts = flatten(val.scene_ids, dets, val.labels)
    return evaluate(preds, gts, len(CLASS_NAMES), cfg.match, CLASS_NAMES)


# ---------------------------------------------------------------------- ablation
def row_configs(cfg: RunConfig) -> list:
    return [(name, cfg.with_overrides(over)) for name, over in ABLATION_ROWS]


def audit_rows(rows: list) -> dict:
    """Per row, the flat keys whose value differs from the first row.

    Raises ``AssertionError`` if any difference falls outside :data:`TOGGLE_KEYS`.
    """
    base = to_flat(rows[0][1])
    out = {}
    for name, cfg in rows:
        flat = to_flat(cfg)
        diff = {k: flat[k] for k in flat if flat[k] != base[k]}
        stray = sorted(set(diff) - set(TOGGLE_KEYS))
        if stray:
            raise AssertionError(f"row {name} differs outside the declared toggles: {stray}")
        out[name] = diff
    return out


def _datasets_for(cfg: RunConfig, data: BenchmarkData):
    ex = cfg.experiment
    real = data.real_train.fraction(ex.real_fraction)
    sim = data.sim.fraction(ex.sim_fraction) if ex.sim_fraction > 0 else None
    return real, sim


@dataclass
class AblationTable:
    rows: list  # list of dicts, one per (row, seed)
    audit: dict
    seeds: tuple

    def mean_map(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out.setdefault(r["row"], []).append(r["mAP"])
        return {k: float(np.mean(v)) for k, v in out.items()}

    def columns(self) -> list:
        return (["row", "seed"] + list(TOGGLE_KEYS) + ["mAP"] +
                [f"AP_{n}" for n in CLASS_NAMES])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            w.writerow([_cell(r[c]) for c in self.columns()])
        return buf.getvalue()

    def to_text(self) -> str:
        cols = self.columns()
        cells = [cols] + [[_cell(r[c], pretty=True) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
        lines = ["  ".join(v.rjust(widths[i]) if i >= 2 else v.ljust(widths[i])
                           for i, v in enumerate(row)).rstrip() for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _cell(v, pretty=False) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if pretty:
            return f"{v:.2f}"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _row_record(name, seed, cfg, res: RunResult) -> dict:
    flat = to_flat(cfg)
    rec = {"row": name, "seed": seed}
    rec.update({k: flat[k] for k in TOGGLE_KEYS})
    rec["mAP"] = 100.0 * res.report.mAP
    for c, n in enumerate(CLASS_NAMES):
        v = res.report.class_ap[c]
        rec[f"AP_{n}"] = None if v is None else 100.0 * v
    rec["train_s"] = res.train_seconds
    rec["eval_s"] = res.eval_seconds
    return rec


def run_ablation(cfg: RunConfig, data: BenchmarkData | None = None, seeds=None,
                 rows: tuple | None = None) -> AblationTable:
    """Train and evaluate every ablation row; mAP/AP columns are in toy-mAP points (0-100)."""
    data = load_benchmark(cfg) if data is None else data
    configs = row_configs(cfg)
    audit = audit_rows(configs)
    if rows is not None:
        configs = [(n, c) for n, c in configs if n in rows]
    seeds = (cfg.train.seed,) if seeds is None else tuple(seeds)
    records = []
    for seed in seeds:
        for name, rc in configs:
            rc = replace(rc, train=replace(rc.train, seed=seed))
            real, sim = _datasets_for(rc, data)
            res = train_and_eval(rc, real, sim, data.real_val, name)
            records.append(_row_record(name, seed, rc, res))
    return AblationTable(records, audit, seeds)


# ---------------------------------------------------------------------- corner case
@dataclass
class CornerCaseReport:
    class_id: int
    class_name: str
    baseline: EvalReport
    joint: EvalReport
    baseline_seconds: float
    joint_seconds: float

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "class_name": self.class_name,
            "baseline": self.baseline.to_json(),
            "joint": self.joint.to_json(),
            "heldout_ap": {"baseline": _pct(self.baseline.class_ap[self.class_id]),
                           "joint": _pct(self.joint.class_ap[self.class_id])},
            "other_ap_delta": {CLASS_NAMES[c]: _delta(self.joint.class_ap[c], self.baseline.class_ap[c])
                               for c in range(len(CLASS_NAMES)) if c != self.class_id},
            "seconds": {"baseline": self.baseline_seconds, "joint": self.joint_seconds},
        }


def _pct(v):
    return None if v is None else 100.0 * v


def _delta(a, b):
    return None if a is None or b is None else 100.0 * (a - b)


def run_corner_case(cfg: RunConfig, class_id: int | None = None,
                    data: BenchmarkData | None = None) -> CornerCaseReport:
    """Strip one class from the pseudo-real training labels and compare the
    real-only baseline with full joint training on the same real subset."""
    class_id = cfg.experiment.heldout_class if class_id is None else class_id
    if not 0 <= class_id < len(CLASS_NAMES):
        raise ValueError(f"unknown class id {class_id}")
    data = load_benchmark(cfg) if data is None else data
    if data.sim.class_counts(len(CLASS_NAMES))[class_id] == 0:
        raise ValueError(f"class {CLASS_NAMES[class_id]} has no sim labels; alignment cannot help")
    ex = cfg.experiment
    real = data.real_train.fraction(ex.real_fraction).without_class(class_id)
    base_cfg = cfg.with_overrides(dict(ABLATION_ROWS)["real_only"])
    full_cfg = cfg.with_overrides(dict(ABLATION_ROWS)["full"])
    base = train_and_eval(base_cfg, real, None, data.real_val, "corner_baseline")
    full = train_and_eval(full_cfg, real, data.sim, data.real_val, "corner_full")
    return CornerCaseReport(class_id, CLASS_NAMES[class_id], base.report, full.report,
                            base.train_seconds + base.eval_seconds,
                            full.train_seconds + full.eval_seconds)
