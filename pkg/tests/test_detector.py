import numpy as np
import pytest

from simbridge.detector.features import BevGridConfig, featurize, normalize, synthetic_timestamp
from simbridge.detector.losses import (LossWeights, assign_targets, decode_box, detection_loss,
                                       encode_box)
from simbridge.detector.network import BevDetector, DetectorConfig, col2im3, im2col3
from simbridge.detector.predict import decode
from simbridge.detector.roi import roi_grid_pool, roi_grid_pool_backward
from simbridge.geometry import Box3D
from simbridge.pcdio import REAL_CHANNELS, PointCloud

SMALL = BevGridConfig(x_range=4.0, y_range=4.0, cell=1.0)  # 8 x 8


def _randomize_biases(model, rng):
    # keep every ReLU away from its kink so central differences are valid
    for k, v in model.params.items():
        if k.endswith(".b"):
            model.params[k] = v + rng.normal(0, 0.1, v.shape)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30)


# ---------------------------------------------------------------------- features
def test_featurize_empty_and_single_point():
    g = BevGridConfig()
    assert not featurize(PointCloud(np.zeros((0, 3))), g).data.any()
    x, y = g.cell_center(10, 20)
    p = featurize(PointCloud(np.array([[x, y, 1.0]])), g).data
    assert p[10, 20, 0] == 1 and p[10, 20, 1] == 1.0 and p[10, 20, 2] == 1.0
    assert p.sum() == pytest.approx(3 + np.hypot(x, np.hypot(y, 1.0)))


def test_featurize_matches_brute_force():
    g = BevGridConfig()
    rng = np.random.default_rng(0)
    xyz = rng.uniform(-30, 30, (1000, 3)).astype(np.float32)
    feats = rng.uniform(0, 0.05, (1000, 2)).astype(np.float32)
    p = featurize(PointCloud(xyz, feats, REAL_CHANNELS, "real"), g).data
    want = np.zeros_like(p)
    x = xyz.astype(float)
    sums = {}
    for i in range(len(x)):
        r, c = g.cell_of(x[i, 0], x[i, 1])
        if not (0 <= r < g.height and 0 <= c < g.width):
            continue
        sums.setdefault((int(r), int(c)), []).append(i)
    for (r, c), idx in sums.items():
        pts = x[idx]
        want[r, c] = [len(idx), pts[:, 2].mean(), pts[:, 2].max(),
                      np.linalg.norm(pts, axis=1).mean(), *feats[idx].astype(float).mean(0)]
    np.testing.assert_allclose(p, want, rtol=1e-12, atol=1e-12)


def test_sim_timestamp_channel():
    g = BevGridConfig()
    c = PointCloud(np.array([[5.0, 5.0, 0.0]]))
    p = featurize(c, g, sim_timestamp=True)
    assert p.channels[-1] == "timestamp" and p.n_channels == 5
    r, col = g.cell_of(5.0, 5.0)
    assert p.data[r, col, 4] == pytest.approx(synthetic_timestamp(c.xyz.astype(float))[0])
    assert normalize(p, g)[r, col, 4] == pytest.approx(0.125)


# ---------------------------------------------------------------------- network
def test_im2col_adjoint():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 6, 3))
    y = rng.normal(size=(2, 5, 6, 27))
    assert np.sum(im2col3(x) * y) == pytest.approx(np.sum(x * col2im3(y, 3)))


def test_zero_input_gives_head_bias():
    m = BevDetector(DetectorConfig(SMALL, d_feat=8))
    bev, out, _ = m.forward(np.zeros((1, 8, 8, 4)), "sim")
    assert not bev.any()
    assert np.array_equal(out[0, 3, 3], m.params["head.b"])


def test_sim_and_real_paths_share_trunk():
    m = BevDetector(DetectorConfig(SMALL, d_feat=8), seed=3)
    assert np.array_equal(m.params["input.sim.W"], m.params["input.real.W"][:4])
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1, 8, 8, 4))
    xr = np.concatenate([x, np.zeros((1, 8, 8, 2))], axis=-1)
    b_sim, o_sim, _ = m.forward(x, "sim")
    b_real, o_real, _ = m.forward(xr, "real")
    assert np.array_equal(b_sim, b_real) and np.array_equal(o_sim, o_real)


def test_channel_mismatch_rejected():
    m = BevDetector(DetectorConfig(SMALL, d_feat=4))
    with pytest.raises(ValueError, match="channels"):
        m.forward(np.zeros((1, 8, 8, 6)), "sim")
    naive = BevDetector(DetectorConfig(SMALL, d_feat=4, domain_aware=False))
    assert naive.forward(np.zeros((1, 8, 8, 4)), "sim")[1].shape == (1, 8, 8, 13)


def test_parameter_registry():
    m = BevDetector()
    assert m.domain_specific() == ["input.real.W", "input.real.b", "input.sim.W", "input.sim.b"]
    assert all(not n.startswith("input.") for n in m.shared())
    assert 0 < m.domain_fraction() < 0.05
    naive = BevDetector(DetectorConfig(domain_aware=False))
    assert naive.domain_specific() == []


def _boxes():
    return [Box3D((-1.3, 0.6, -1.0), 2.5, 1.2, 1.5, 30, 0), Box3D((1.7, -2.2, -1.2), 0.8, 0.8, 1.7, 200, 2)]


def _full_objective(model, x, domain, tgt, roi_w, boxes):
    bev, out, cache = model.forward(x, domain)
    l, g, _ = detection_loss(out[0], tgt, model.cfg.n_cls, 0.7)
    f, rc = roi_grid_pool(bev[0], boxes, model.cfg.grid, 3)
    return l + float(np.sum(roi_w * f)), (cache, g, rc)


@pytest.mark.parametrize("domain", ["sim", "real"])
def test_end_to_end_gradients(domain):
    rng = np.random.default_rng(7)
    m = BevDetector(DetectorConfig(SMALL, d_feat=6), seed=1)
    _randomize_biases(m, rng)
    m.params["head.W"] = rng.normal(0, 0.3, m.params["head.W"].shape)
    ch = 4 if domain == "sim" else 6
    x = rng.uniform(0.1, 1.0, (1, 8, 8, ch))
    boxes = _boxes()
    tgt = assign_targets(boxes, SMALL)
    roi_w = rng.normal(size=(len(boxes), 6))
    _, (cache, g_out, rc) = _full_objective(m, x, domain, tgt, roi_w, boxes)
    grads = m.backward(cache, g_out[None], roi_grid_pool_backward(rc, roi_w)[None])
    assert set(grads) == {k for k in m.params if not k.startswith("input.") or f".{domain}." in k}
    h = 1e-6
    for name, g in grads.items():
        p = m.params[name]
        num = np.zeros_like(p)
        for i in np.ndindex(*p.shape):
            old = p[i]
            p[i] = old + h
            lp = _full_objective(m, x, domain, tgt, roi_w, boxes)[0]
            p[i] = old - h
            lm = _full_objective(m, x, domain, tgt, roi_w, boxes)[0]
            p[i] = old
            num[i] = (lp - lm) / (2 * h)
        assert _rel_err(g, num) < 1e-5, name


# ---------------------------------------------------------------------- RoI pooling
def test_roi_constant_map():
    bev = np.full((8, 8, 3), 2.5)
    f, _ = roi_grid_pool(bev, _boxes() + [Box3D((3.9, 3.9, 0), 3, 3, 1)], SMALL, 4)
    np.testing.assert_allclose(f, 2.5, rtol=0, atol=1e-14)


def test_roi_g1_is_center_sample():
    rng = np.random.default_rng(2)
    bev = rng.normal(size=(8, 8, 2))
    box = Box3D((-0.5, 0.5, 0), 2, 1, 1, 77)
    f, _ = roi_grid_pool(bev, [box], SMALL, 1)
    # the center (-0.5, 0.5) is exactly the center of cell (row 4, col 3)
    np.testing.assert_allclose(f[0], bev[4, 3], atol=1e-14)
    box2 = Box3D((0.0, 0.5, 0), 2, 1, 1, 0)
    f2, _ = roi_grid_pool(bev, [box2], SMALL, 1)
    np.testing.assert_allclose(f2[0], 0.5 * (bev[4, 3] + bev[4, 4]), atol=1e-14)


def test_roi_gradient_finite_difference():
    rng = np.random.default_rng(3)
    bev = rng.normal(size=(8, 8, 3))
    boxes = _boxes()
    w = rng.normal(size=(2, 3))
    f, cache = roi_grid_pool(bev, boxes, SMALL, 4)
    g = roi_grid_pool_backward(cache, w)
    num = np.zeros_like(bev)
    for i in np.ndindex(*bev.shape):
        bp, bm = bev.copy(), bev.copy()
        bp[i] += 1e-6
        bm[i] -= 1e-6
        num[i] = (np.sum(w * roi_grid_pool(bp, boxes, SMALL, 4)[0]) -
                  np.sum(w * roi_grid_pool(bm, boxes, SMALL, 4)[0])) / 2e-6
    assert _rel_err(g, num) < 1e-5


def test_roi_empty():
    f, cache = roi_grid_pool(np.ones((8, 8, 2)), [], SMALL)
    assert f.shape == (0, 2) and not roi_grid_pool_backward(cache, f).any()


# ---------------------------------------------------------------------- loss, codec, decode
def test_no_labels_confident_negatives_zero_loss():
    out = np.full((8, 8, 13), -30.0)
    l, g, _ = detection_loss(out, assign_targets([], SMALL), 4)
    assert 0 <= l < 1e-20 and np.abs(g).max() < 1e-20


def test_zero_weight_zero_gradient():
    out = np.random.default_rng(0).normal(size=(8, 8, 13))
    l, g, _ = detection_loss(out, assign_targets(_boxes(), SMALL), 4, weight=0.0)
    assert l == 0.0 and not g.any()


def test_detection_loss_gradient():
    rng = np.random.default_rng(5)
    out = rng.normal(size=(8, 8, 13))
    tgt = assign_targets(_boxes(), SMALL)
    _, g, _ = detection_loss(out, tgt, 4, 0.3)
    num = np.zeros_like(out)
    for i in np.ndindex(*out.shape):
        op, om = out.copy(), out.copy()
        op[i] += 1e-6
        om[i] -= 1e-6
        num[i] = (detection_loss(op, tgt, 4, 0.3)[0] - detection_loss(om, tgt, 4, 0.3)[0]) / 2e-6
    assert _rel_err(g, num) < 1e-5


def test_targets_ignore_and_collide():
    boxes = [Box3D((10, 0, 0), 1, 1, 1), Box3D((0.2, 0.2, 0), 1, 1, 1), Box3D((0.3, 0.3, 0), 1, 1, 1)]
    t = assign_targets(boxes, SMALL)
    assert t.n_ignored == 1 and t.n_collided == 1 and len(t.pos_rows) == 1
    assert t.heatmap[t.pos_rows[0], t.pos_cols[0]] == 1.0


def test_codec_round_trip():
    rng = np.random.default_rng(9)
    g = BevGridConfig()
    for _ in range(50):
        b = Box3D((*rng.uniform(-23, 23, 2), rng.uniform(-2, 0)), *rng.uniform(0.3, 6, 3),
                  rng.uniform(0, 360), int(rng.integers(0, 4)))
        r, c, t = encode_box(b, g)
        d = decode_box(r, c, t, b.category_id, g)
        np.testing.assert_allclose(d.center, b.center, atol=1e-6)
        np.testing.assert_allclose(d.size, b.size, rtol=1e-6)
        assert abs((d.yaw - b.yaw + 180) % 360 - 180) < 1e-6


def _decoder_model():
    return BevDetector(DetectorConfig(SMALL, d_feat=4))


def test_decode_empty_below_threshold():
    out = np.full((8, 8, 13), -5.0)
    assert decode(out, _decoder_model(), score_threshold=0.1) == []


def test_decode_suppresses_close_lower_score():
    m = _decoder_model()
    out = np.full((8, 8, 13), -10.0)
    # head layout: objectness, 4 class logits, dx, dy, z, log l, log w, log h, sin, cos
    out[..., 5:12] = 0.0
    out[..., 12] = 1.0
    # cell (4, 4) center is (0.5, 0.5); cell (4, 5) is (1.5, 0.5)
    out[4, 4, 0], out[4, 4, 5] = 3.0, 0.45
    out[4, 5, 0], out[4, 5, 5] = 2.0, -0.45
    kept = decode(out, m, 0.1, nms_radius=1.0)
    assert len(kept) == 1
    assert kept[0][0].center[0] == pytest.approx(0.95)
    assert kept[0][1] == pytest.approx(1 / (1 + np.exp(-3.0)))
    assert len(decode(out, m, 0.1, nms_radius=0.05)) == 2


def test_loss_weights_validation():
    assert LossWeights().omega("sim") == 0.1 and LossWeights().omega("real") == 1.0
    with pytest.raises(ValueError):
        LossWeights(sma_lambda=-1)
