import hashlib
import json
import math

import numpy as np
import pytest

from simbridge import kernels
from simbridge.datasets import DatasetMissing, load_dataset
from simbridge.geometry import Box3D, points_in_box
from simbridge.simulator import (DatasetSpec, LidarModel, ObjectSpec, SceneDescription,
                                 generate_dataset, raycast_scene, real_domain, sample_scene,
                                 sim_domain)


def _scene(*objects, domain="sim", seed=0):
    return SceneDescription(0, tuple(objects), -1.8, domain, seed)


def test_single_beam_ground_ring():
    lidar = LidarModel(n_beams=1, elevation_angles=(-10.0,), azimuth_step=1.0)
    res = raycast_scene(_scene(), lidar)
    xyz = res.cloud.xyz.astype(float)
    assert len(xyz) == 360
    np.testing.assert_allclose(xyz[:, 2], -1.8, atol=1e-6)
    r_expected = 1.8 / math.sin(math.radians(10))
    np.testing.assert_allclose(np.linalg.norm(xyz, axis=1), r_expected, rtol=1e-6)
    assert (res.hit_object == kernels.HIT_GROUND).all() and res.boxes == []


def test_object_beyond_max_range():
    far = ObjectSpec(0, "cuboid", Box3D((60, 0, -1.05), 4, 2, 1.5), 0.5)
    res = raycast_scene(_scene(far), LidarModel(max_range=50.0))
    assert not (res.hit_object >= 0).any()
    assert res.boxes == []


@pytest.mark.parametrize("kind", ["cuboid", "cylinder"])
def test_object_points_inside_box(kind):
    box = Box3D((10, 0, 0), 4, 2 if kind == "cuboid" else 4, 1.5, 30)
    res = raycast_scene(_scene(ObjectSpec(0, kind, box, 0.5)), LidarModel())
    obj = np.flatnonzero(res.hit_object == 0)
    assert len(obj) > 50
    inside = points_in_box(res.cloud.xyz[obj], box, margin=1e-6)
    assert len(inside) == len(obj)
    assert res.boxes == [box]


def test_cylinder_points_on_surface():
    box = Box3D((8, 3, -1.0), 1.0, 1.0, 1.6)
    res = raycast_scene(_scene(ObjectSpec(2, "cylinder", box, 0.5)), LidarModel())
    p = res.cloud.xyz[res.hit_object == 0].astype(float)
    rho = np.hypot(p[:, 0] - 8, p[:, 1] - 3)
    top = np.isclose(p[:, 2], -0.2, atol=1e-5)
    np.testing.assert_allclose(rho[~top], 0.5, atol=1e-5)


def test_range_noise_std():
    box = Box3D((12, 0, -1.05), 4, 2, 1.5)
    clean = raycast_scene(_scene(ObjectSpec(0, "cuboid", box, 0.5)), LidarModel())
    noisy = raycast_scene(_scene(ObjectSpec(0, "cuboid", box, 0.5), seed=3),
                          LidarModel(noise=(0.05, 0.0, 0.0)))
    dr = np.linalg.norm(noisy.cloud.xyz.astype(float), axis=1) - noisy.true_range
    assert len(dr) == len(clean.true_range)
    assert abs(dr.std() / 0.05 - 1) < 0.05


def test_real_channels():
    box = Box3D((10, 0, -1.05), 4, 2, 1.5)
    res = raycast_scene(_scene(ObjectSpec(0, "cuboid", box, 0.8), domain="real"), LidarModel())
    f = res.cloud.features
    assert res.cloud.channels == ("intensity", "timestamp")
    assert (f[:, 0] >= 0).all() and (f[:, 0] <= 0.8 + 1e-6).all()
    assert (f[:, 1] >= 0).all() and (f[:, 1] < 0.05).all()
    # a box face seen head-on returns close to its full reflectivity
    assert f[res.hit_object == 0, 0].max() > 0.75


def test_ego_zone_rejected():
    near = ObjectSpec(0, "cuboid", Box3D((1.0, 0, -1.05), 4, 2, 1.5), 0.5)
    with pytest.raises(ValueError, match="ego"):
        raycast_scene(_scene(near), LidarModel())


def test_sample_scene_deterministic_and_valid():
    a = sample_scene(5, 123, real_domain())
    b = sample_scene(5, 123, real_domain())
    assert a == b
    a.validate()
    assert 1 <= len(a.objects) <= 14  # placement may give up on a crowded scene
    assert sample_scene(5, 124, real_domain()) != a


def test_kernel_backends_agree():
    if kernels.compiled_backend is None:
        pytest.skip("compiled kernels not built")
    scene = sample_scene(0, 11, sim_domain())
    objs = scene.objects
    lidar = LidarModel()
    dirs = lidar.ray_directions()
    centers = np.array([o.box.center for o in objs])
    halves = np.array([[o.box.length / 2, o.box.width / 2, o.box.height / 2] for o in objs])
    yaw = np.deg2rad([o.box.yaw for o in objs])
    kinds = np.array([kernels.KIND_CYLINDER if o.kind == "cylinder" else kernels.KIND_CUBOID
                      for o in objs])
    args = (dirs, centers, halves, np.cos(yaw), np.sin(yaw), kinds, -1.8, 50.0)
    for a, b in zip(kernels.python_backend.raycast(*args), kernels.compiled_backend.raycast(*args)):
        assert np.array_equal(a, b)
    res = raycast_scene(scene, lidar)
    x = res.cloud.xyz.astype(np.float64)
    f = np.zeros((len(x), 0))
    a = kernels.python_backend.featurize_cells(x, f, -24.0, -24.0, 1.0, 48, 48)
    b = kernels.compiled_backend.featurize_cells(x, f, -24.0, -24.0, 1.0, 48, 48)
    assert np.array_equal(a, b)


def _digests(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_dataset_workers_byte_identical(tmp_path):
    spec = DatasetSpec(real_domain())
    generate_dataset(tmp_path / "w1", 100, spec, 42, workers=1)
    generate_dataset(tmp_path / "w8", 100, spec, 42, workers=8)
    d1, d8 = _digests(tmp_path / "w1"), _digests(tmp_path / "w8")
    assert len(d1) == 102 and d1 == d8


def test_dataset_empty(tmp_path):
    idx = generate_dataset(tmp_path / "d", 0, DatasetSpec(sim_domain()), 0)
    assert idx["scenes"] == []
    assert list((tmp_path / "d" / "clouds").iterdir()) == []
    on_disk = json.loads((tmp_path / "d" / "index.json").read_text())
    assert on_disk["scenes"] == [] and len(load_dataset(tmp_path / "d")) == 0


def test_dataset_load_round_trip(tmp_path):
    generate_dataset(tmp_path / "d", 3, DatasetSpec(real_domain()), 9)
    ds = load_dataset(tmp_path / "d")
    assert ds.domain == "real" and ds.scene_ids == [0, 1, 2]
    assert all(c.channels == ("intensity", "timestamp") for c in ds.clouds)
    assert ds.class_counts(4).sum() == sum(len(b) for b in ds.labels) > 0
    assert len(ds.fraction(0.34)) == 1 and len(ds.fraction(1.0)) == 3


def test_missing_dataset_message(tmp_path):
    with pytest.raises(DatasetMissing, match="gen-sim"):
        load_dataset(tmp_path / "nope")
