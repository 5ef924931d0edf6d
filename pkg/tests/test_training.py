import json
import math

import numpy as np
import pytest

from simbridge.alignment import ObjectFeatures
from simbridge.augmentation import JitterConfig
from simbridge.detector.checkpoint import load_checkpoint, save_checkpoint
from simbridge.detector.losses import LossWeights
from simbridge.detector.network import DetectorConfig
from simbridge.detector.roi import roi_grid_pool
from simbridge.detector.train import EpochSampler, SGD, TrainConfig, Trainer, TrainingDiverged
from simbridge.geometry import PartitionConfig, boxes_to_index


def test_epoch_sampler_covers_each_epoch():
    s = EpochSampler(7, seed=1, stream=3)
    first = s.take(7)
    assert sorted(p for _, p in first) == list(range(7)) and {e for e, _ in first} == {0}
    nxt = s.take(7)
    assert sorted(p for _, p in nxt) == list(range(7)) and {e for e, _ in nxt} == {1}
    assert EpochSampler(7, 1, 3).take(14) == first + nxt


def test_sgd_skips_missing_grads_and_decays_weights_only():
    params = {"a.W": np.ones(3), "a.b": np.ones(3), "c.W": np.ones(2)}
    opt = SGD(params, lr=0.1, momentum=0.0, weight_decay=0.5, total_steps=10)
    opt.step(params, {"a.W": np.zeros(3), "a.b": np.zeros(3)})
    assert np.allclose(params["a.W"], 1 - 0.1 * 0.5) and np.array_equal(params["a.b"], np.ones(3))
    assert np.array_equal(params["c.W"], np.ones(2))


def test_sgd_clip_and_schedule():
    params = {"x.W": np.zeros(2)}
    opt = SGD(params, lr=1.0, momentum=0.0, weight_decay=0.0, total_steps=4, grad_clip=1.0)
    opt.step(params, {"x.W": np.array([3.0, 4.0])})
    np.testing.assert_allclose(params["x.W"], [-0.6, -0.8])
    assert opt.current_lr() == pytest.approx(0.5 * (1 + math.cos(math.pi / 4)))


def test_plain_supervised_loss_decreases(small_data):
    real, _ = small_data
    cfg = TrainConfig(iterations=50, batch_real=len(real), lr=0.003, lr_momentum=0.0,
                      use_sma=False, use_jitter=False)
    tr = Trainer(real, None, DetectorConfig(), cfg, LossWeights(sma_lambda=0.0))
    res = tr.run(log_every=0)
    totals = np.array([r[4] for r in res.metrics])
    assert len(totals) == 50 and np.all(np.diff(totals) < 0)
    assert all(r[2] == 0.0 and r[3] == 0.0 for r in res.metrics)


def _joint_cfg(**kw):
    base = dict(iterations=6, batch_real=2, batch_sim=2, warmup=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_training_bitwise_deterministic(small_data, tmp_path):
    real, sim = small_data
    runs = []
    for k in range(2):
        tr = Trainer(real, sim, DetectorConfig(), _joint_cfg(), jitter=JitterConfig(0.05, 3e-3, 3e-3))
        res = tr.run(log_every=0)
        save_checkpoint(tmp_path / f"c{k}", res.model, {"real": res.real_bank, "sim": res.sim_bank})
        runs.append(res)
    a, b = runs
    assert a.metrics == b.metrics
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    assert (tmp_path / "c0.bin").read_bytes() == (tmp_path / "c1.bin").read_bytes()
    assert (tmp_path / "c0.json").read_text() == (tmp_path / "c1.json").read_text()


def test_loss_recomposes_from_logged_terms(small_data):
    real, sim = small_data
    w = LossWeights(0.3, 0.9, 0.2)
    tr = Trainer(real, sim, DetectorConfig(), _joint_cfg(warmup=1), w)
    res = tr.run(log_every=0)
    assert any(r[3] > 0 for r in res.metrics)
    for it, lr_, ls, la, total in res.metrics:
        assert total == (w.omega_real * lr_ + w.omega_sim * ls) + w.sma_lambda * la


def test_sim_step_leaves_real_input_layer_untouched(small_data):
    real, sim = small_data
    tr = Trainer(real, sim, DetectorConfig(), _joint_cfg(warmup=0))
    before = {k: v.copy() for k, v in tr.model.params.items()}
    tr.step({"sim": [(0, 0), (0, 1)]})
    p = tr.model.params
    assert np.array_equal(p["input.real.W"], before["input.real.W"])
    assert np.array_equal(p["input.real.b"], before["input.real.b"])
    assert not np.array_equal(p["input.sim.W"], before["input.sim.W"])
    assert not np.array_equal(p["trunk.fc1.W"], before["trunk.fc1.W"])


def test_zero_sim_weight_gives_zero_sim_gradient(small_data):
    real, sim = small_data
    tr = Trainer(real, sim, DetectorConfig(), _joint_cfg(use_sma=False), LossWeights(0.1, 1.0, 0.0))
    grads, row = tr.compute({"sim": [(0, 0), (0, 3)]})
    assert row[1] > 0
    assert all(not g.any() for g in grads.values())


def test_frozen_trunk_alignment_pull(small_data):
    real, sim = small_data
    part = PartitionConfig()
    cfg = _joint_cfg(warmup=0, lr=0.02, lr_momentum=0.0, weight_decay=0.0, iterations=100,
                     freeze=("trunk.", "head."), use_jitter=False)
    # detection terms off so only the alignment gradient moves the input layers
    tr = Trainer(real, sim, DetectorConfig(), cfg, LossWeights(1.0, 0.0, 0.0), partition=part)
    batch = {"real": [(0, 0), (0, 1)], "sim": [(0, 0), (0, 1)]}
    frozen = {k: v.copy() for k, v in tr.model.params.items() if not k.startswith("input.")}

    def sim_distance():
        x = np.stack([tr._input("sim", 0, p) for _, p in batch["sim"]])
        bev, _, _ = tr.model.forward(x, "sim")
        vecs, idx = [], []
        for b, (_, p) in enumerate(batch["sim"]):
            boxes = tr._boxes("sim", p)
            vecs.append(roi_grid_pool(bev[b], boxes, tr.model.cfg.grid, cfg.roi_grid)[0])
            idx.append(boxes_to_index(boxes, part))
        f = ObjectFeatures(np.concatenate(vecs), np.concatenate(idx), "sim")
        target, ok = tr.real_bank.lookup(f.index)
        return float(np.mean(np.sum((f.vectors[ok] - target[ok]) ** 2, axis=1))), int(ok.sum())

    tr.step(batch)  # fills both banks
    dists = []
    for _ in range(100):
        d, n_ok = sim_distance()
        assert n_ok > 0
        dists.append(d)
        tr.step(batch)
    assert np.all(np.diff(dists) < 0)
    for k, v in frozen.items():
        assert np.array_equal(tr.model.params[k], v)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_reports_diagnostics(small_data):
    real, _ = small_data
    tr = Trainer(real, None, DetectorConfig(), _joint_cfg(use_sma=False))
    tr.model.params["head.b"][0] = np.nan
    with pytest.raises(TrainingDiverged, match="L_DET_real"):
        tr.step()


def test_checkpoint_round_trip(small_data, tmp_path):
    real, sim = small_data
    res = Trainer(real, sim, DetectorConfig(), _joint_cfg(iterations=3, warmup=0)).run(log_every=0)
    man = save_checkpoint(tmp_path / "ck", res.model, {"real": res.real_bank, "sim": res.sim_bank})
    model, banks, man2 = load_checkpoint(tmp_path / "ck.bin")
    assert man2 == json.loads(json.dumps(man))
    groups = {e["name"]: e["group"] for e in man["tensors"]}
    assert groups["input.real.W"] == "domain:real" and groups["trunk.fc1.W"] == "shared"
    assert groups["real.entries"] == "buffer"
    for k, v in res.model.params.items():
        np.testing.assert_array_equal(model.params[k], v.astype(np.float32).astype(np.float64))
    assert np.array_equal(banks["sim"].valid, res.sim_bank.valid)
    assert sorted(model.params) == sorted(res.model.params)
