"""Command-line entry points.

Every subcommand accepts ``--seed``, ``--out`` and ``--config`` and writes a
``manifest.json`` next to its outputs holding the resolved configuration, the
seed, the argument vector and a sha256 digest per artifact.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure. On
failure a single JSON line ``{"error": <kind>, "message": <text>}`` goes to
stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .augmentation import jitter_sample
from .config import ConfigError, RunConfig, to_flat
from .datasets import DatasetMissing, load_dataset
from .detector.checkpoint import load_checkpoint, save_checkpoint
from .detector.train import METRIC_COLUMNS, Trainer, TrainingDiverged
from .evaluation import experiments as ex
from .pcdio import write_jpcd
from .simulator import generate_dataset

log = logging.getLogger("simbridge")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------- helpers
def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list, cfg: RunConfig, artifacts: list) -> dict:
    digests = {}
    for p in sorted(artifacts, key=str):
        p = Path(p)
        digests[p.relative_to(out).as_posix() if p.is_relative_to(out) else str(p)] = _sha256(p)
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": cfg.seed,
        "config": to_flat(cfg),
        "artifacts": digests,
        "version": __version__,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def _write_text(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _write_json(path: Path, obj) -> Path:
    return _write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": args.seed, "train.seed": args.seed})
    return cfg


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_root(cfg: RunConfig, args):
    if getattr(args, "data", None):
        return cfg.with_overrides({"paths.sim": str(Path(args.data) / "sim"),
                                   "paths.real_train": str(Path(args.data) / "real_train"),
                                   "paths.real_val": str(Path(args.data) / "real_val")})
    return cfg


# ---------------------------------------------------------------------- commands
def cmd_gen(args, cfg: RunConfig, argv) -> int:
    domain = "sim" if args.command == "gen-sim" else "real"
    out = _out_dir(args)
    n = args.scenes
    if n is None:
        n = cfg.experiment.n_sim if domain == "sim" else cfg.experiment.n_real_train
    if n < 0:
        raise UsageError("--scenes must be >= 0")
    workers = cfg.experiment.workers if args.workers is None else args.workers
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    generate_dataset(out, n, cfg.dataset_spec(domain), cfg.seed, workers)
    arts = [out / "index.json", out / "labels.jsonl"] + sorted((out / "clouds").glob("*.jpcd"))
    write_manifest(out, args.command, argv, cfg, arts)
    return 0


def cmd_augment(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args)
    ds = load_dataset(args.input)
    if ds.domain != "sim":
        raise UsageError("augment: jitter applies to sim datasets only")
    (out / "clouds").mkdir(exist_ok=True)
    arts = []
    for sid, cloud in zip(ds.scene_ids, ds.clouds):
        noisy = jitter_sample(cloud, cfg.jitter, cfg.seed, args.epoch, sid)
        path = out / "clouds" / f"{sid:06d}.jpcd"
        write_jpcd(path, noisy)
        arts.append(path)
    write_manifest(out, args.command, argv, cfg, arts)
    return 0


def _train_datasets(cfg: RunConfig):
    real = load_dataset(cfg.paths.real_train) if cfg.paths.real_train else None
    if real is not None:
        real = real.fraction(cfg.experiment.real_fraction)
    sim = None
    if cfg.paths.sim and cfg.experiment.sim_fraction > 0:
        sim = load_dataset(cfg.paths.sim).fraction(cfg.experiment.sim_fraction)
    if real is None and sim is None:
        raise DatasetMissing("no training data: set paths.real_train and/or paths.sim (or --data)")
    return real, sim


def write_metrics_csv(path: Path, rows: list) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    return path


def cmd_train(args, cfg: RunConfig, argv) -> int:
    cfg = _data_root(cfg, args)
    out = _out_dir(args)
    real, sim = _train_datasets(cfg)
    trainer = Trainer(real, sim, cfg.detector_config(), cfg.train, cfg.loss, cfg.jitter, cfg.partition)
    res = trainer.run(log_every=args.log_every)
    save_checkpoint(out / "checkpoint", res.model, {"real": res.real_bank, "sim": res.sim_bank},
                    {"sim_timestamp": cfg.train.sim_timestamp})
    arts = [out / "checkpoint.bin", out / "checkpoint.json",
            write_metrics_csv(out / "metrics.csv", res.metrics)]
    write_manifest(out, args.command, argv, cfg, arts)
    return 0


def cmd_eval(args, cfg: RunConfig, argv) -> int:
    cfg = _data_root(cfg, args)
    out = _out_dir(args)
    model, _, manifest = load_checkpoint(args.checkpoint)
    path = args.dataset or cfg.paths.real_val
    if not path:
        raise DatasetMissing("no evaluation data: pass --dataset or set paths.real_val")
    ds = load_dataset(path)
    st = manifest.get("extra", {}).get("sim_timestamp", False)
    cfg = cfg.with_overrides({"train.sim_timestamp": st})
    report = ex.evaluate_model(model, ds, cfg)
    arts = [_write_json(out / "eval.json", report.to_json())]
    write_manifest(out, args.command, argv, cfg, arts)
    print(f"mAP {100 * report.mAP:.2f}")
    return 0


def cmd_ablate(args, cfg: RunConfig, argv) -> int:
    cfg = _data_root(cfg, args)
    out = _out_dir(args)
    base = cfg.train.seed
    seeds = tuple(range(base, base + args.n_seeds))
    table = ex.run_ablation(cfg, seeds=seeds)
    arts = [_write_text(out / "ablation.csv", table.to_csv()),
            _write_text(out / "ablation.txt", table.to_text()),
            _write_json(out / "audit.json", table.audit)]
    write_manifest(out, args.command, argv, cfg, arts)
    sys.stdout.write(table.to_text())
    return 0


def cmd_corner(args, cfg: RunConfig, argv) -> int:
    cfg = _data_root(cfg, args)
    out = _out_dir(args)
    cls = args.class_id
    if cls is not None and not cls.isdigit():
        if cls not in ex.CLASS_NAMES:
            raise UsageError(f"unknown class {cls!r}; choose from {', '.join(ex.CLASS_NAMES)}")
        cls = ex.CLASS_NAMES.index(cls)
    elif cls is not None:
        cls = int(cls)
    rep = ex.run_corner_case(cfg, cls)
    data = rep.to_json()
    data.pop("seconds")
    arts = [_write_json(out / "corner_case.json", data)]
    write_manifest(out, args.command, argv, cfg, arts)
    h = data["heldout_ap"]
    print(f"{rep.class_name}: baseline {h['baseline']:.2f}  joint {h['joint']:.2f}")
    return 0


def cmd_inspect(args, cfg: RunConfig, argv) -> int:
    _, banks, _ = load_checkpoint(args.checkpoint)
    summary = {k: b.summary() for k, b in sorted(banks.items())}
    text = json.dumps(summary, sort_keys=True, indent=1) + "\n"
    if args.out:
        out = _out_dir(args)
        arts = [_write_text(out / "memory.json", text)]
        write_manifest(out, args.command, argv, cfg, arts)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-sim": cmd_gen,
    "gen-real": cmd_gen,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "corner-case": cmd_corner,
    "inspect-memory": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="flat JSON run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="simbridge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    for name, what in (("gen-sim", "simulated"), ("gen-real", "pseudo-real")):
        s = sub.add_parser(name, parents=[common], help=f"generate a {what} dataset")
        s.add_argument("--scenes", type=int, default=None)
        s.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("augment", parents=[common], help="write one epoch of jittered sim clouds")
    s.add_argument("--input", required=True, help="sim dataset directory")
    s.add_argument("--epoch", type=int, default=0)

    s = sub.add_parser("train", parents=[common], help="train a detector")
    s.add_argument("--data", default=None, help="root holding sim/ and real_train/")
    s.add_argument("--log-every", type=int, default=100)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True, help="checkpoint stem or .bin/.json path")
    s.add_argument("--dataset", default=None, help="evaluation dataset (default paths.real_val)")
    s.add_argument("--data", default=None, help="root holding real_val/")

    s = sub.add_parser("ablate", parents=[common], help="run the six-row ablation suite")
    s.add_argument("--data", default=None, help="root holding sim/, real_train/, real_val/")
    s.add_argument("--n-seeds", type=int, default=1)

    s = sub.add_parser("corner-case", parents=[common], help="held-out class experiment")
    s.add_argument("--data", default=None)
    s.add_argument("--class", dest="class_id", default=None, help="class id or name")

    s = sub.add_parser("inspect-memory", parents=[common], help="summarize memory banks in a checkpoint")
    s.add_argument("--checkpoint", required=True)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg, argv)
    except (ConfigError, UsageError) as e:
        parser.print_usage(sys.stderr)
        return _fail(type(e).__name__, str(e), 2)
    except DatasetMissing as e:
        return _fail("DatasetMissing", str(e), 1)
    except TrainingDiverged as e:
        return _fail("TrainingDiverged", str(e), 1)
    except (OSError, ValueError) as e:
        return _fail(type(e).__name__, str(e), 1)


if __name__ == "__main__":
    sys.exit(main())
