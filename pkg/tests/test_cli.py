import csv
import hashlib
import json

import pytest

from simbridge.cli import main
from simbridge.config import RunConfig
from simbridge.evaluation.experiments import ABLATION_ROWS

TINY = {
    "train.iterations": 4, "train.batch_real": 2, "train.batch_sim": 2, "train.warmup": 1,
    "experiment.real_fraction": 1.0, "detector.d_feat": 8,
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    RunConfig().with_overrides(TINY).save(cfg)
    data = root / "data"
    assert main(["gen-sim", "--scenes", "4", "--out", str(data / "sim"), "--seed", "1"]) == 0
    assert main(["gen-real", "--scenes", "4", "--out", str(data / "real_train"), "--seed", "2"]) == 0
    assert main(["gen-real", "--scenes", "3", "--out", str(data / "real_val"), "--seed", "3"]) == 0
    return root, cfg, data


def _sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def test_gen_zero_scenes(tmp_path):
    assert main(["gen-sim", "--scenes", "0", "--out", str(tmp_path / "d")]) == 0
    idx = json.loads((tmp_path / "d" / "index.json").read_text())
    assert idx["scenes"] == []
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert man["command"] == "gen-sim" and man["seed"] == 0
    assert set(man["artifacts"]) == {"index.json", "labels.jsonl"}


def test_manifest_digests_and_regeneration(tiny, tmp_path):
    _, _, data = tiny
    man = json.loads((data / "sim" / "manifest.json").read_text())
    assert len(man["artifacts"]) == 6
    for rel, digest in man["artifacts"].items():
        assert _sha(data / "sim" / rel) == digest
    # the recorded config and seed regenerate the same bytes
    cfg = tmp_path / "c.json"
    RunConfig().with_overrides(man["config"]).save(cfg)
    assert main(["gen-sim", "--scenes", "4", "--out", str(tmp_path / "again"), "--config", str(cfg)]) == 0
    again = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert again["artifacts"] == man["artifacts"]


def test_train_twice_identical(tiny, tmp_path):
    _, cfg, data = tiny
    outs = []
    for k in range(2):
        out = tmp_path / f"t{k}"
        assert main(["train", "--config", str(cfg), "--seed", "7", "--data", str(data),
                     "--out", str(out), "--log-every", "0"]) == 0
        outs.append(out)
    for name in ("checkpoint.bin", "checkpoint.json", "metrics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = list(csv.reader(open(outs[0] / "metrics.csv")))
    assert len(rows) == 5
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["train.seed"] == 7


def test_eval_and_inspect(tiny, tmp_path, capsys):
    _, cfg, data = tiny
    ck = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(ck),
                 "--log-every", "0"]) == 0
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ck / "checkpoint"),
                 "--data", str(data), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert 0.0 <= rep["mAP"] <= 1.0 and rep["n_labels"] > 0
    capsys.readouterr()
    assert main(["inspect-memory", "--checkpoint", str(ck / "checkpoint.bin")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"real", "sim"}


def test_ablate_writes_six_audited_rows(tiny, tmp_path):
    _, cfg, data = tiny
    out = tmp_path / "ab"
    assert main(["ablate", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["row"] for r in rows] == [name for name, _ in ABLATION_ROWS]
    audit = json.loads((out / "audit.json").read_text())
    assert audit["real_only"] == {}
    assert audit["naive_joint"] == {"experiment.sim_fraction": 1.0, "detector.domain_aware": False}
    assert audit["full_half_sim"]["experiment.sim_fraction"] == 0.5
    for r in rows:
        assert r["train.use_sma"] in ("0", "1") and r["mAP"] != ""


def test_augment_rejects_real(tiny, tmp_path):
    _, _, data = tiny
    assert main(["augment", "--input", str(data / "real_train"), "--out", str(tmp_path / "a")]) == 2
    assert main(["augment", "--input", str(data / "sim"), "--out", str(tmp_path / "a"),
                 "--epoch", "3"]) == 0
    assert len(list((tmp_path / "a" / "clouds").iterdir())) == 4


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["gen-sim", "--bogus"]) == 2
    assert main(["frobnicate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"train.nope": 1}')
    capsys.readouterr()
    assert main(["gen-sim", "--scenes", "0", "--out", str(tmp_path), "--config", str(bad)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert json.loads(err[-1])["error"] == "ConfigError"


def test_missing_dataset_exit_1(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    assert code == 1
    line = capsys.readouterr().err.strip().splitlines()[-1]
    msg = json.loads(line)
    assert msg["error"] == "DatasetMissing" and "gen-" in msg["message"]
