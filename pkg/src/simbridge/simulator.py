"""Procedural two-domain LiDAR scenes.

The ``sim`` domain is noiseless and geometry-only. The pseudo-real domain
adds spherical sensor noise, an intensity/timestamp channel pair and
per-class shape deformation; each of the three gap sources can be switched
off independently.
"""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import Box3D, spherical_to_cartesian
from .pcdio import REAL_CHANNELS, PointCloud, label_line, write_jpcd
from .rng import keyed_generator, normal

log = logging.getLogger(__name__)

EGO_RADIUS = 2.0
SWEEP_SECONDS = 0.05
STREAM_LAYOUT = 1
STREAM_NOISE = 2
STREAM_SHAPE = 3


@dataclass(frozen=True)
class LidarModel:
    n_beams: int = 32
    elevation_angles: tuple = tuple(np.round(np.linspace(-25.0, 5.0, 32), 6).tolist())
    azimuth_step: float = 0.5
    max_range: float = 50.0
    noise: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "elevation_angles", tuple(float(e) for e in self.elevation_angles))
        object.__setattr__(self, "noise", tuple(float(v) for v in self.noise))
        if len(self.elevation_angles) != self.n_beams:
            raise ValueError("elevation_angles must have n_beams entries")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        steps = 360.0 / self.azimuth_step
        if self.azimuth_step <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("azimuth_step must divide 360 evenly")
        if len(self.noise) != 3 or min(self.noise) < 0:
            raise ValueError("noise must be three non-negative standard deviations")

    @property
    def n_azimuth(self) -> int:
        return int(round(360.0 / self.azimuth_step))

    def emission_angles(self):
        """Polar angle and azimuth of every ray, beam-major, both ``(R,)``."""
        theta = np.pi / 2 - np.deg2rad(np.asarray(self.elevation_angles))
        az = np.arange(self.n_azimuth) * self.azimuth_step
        az = np.deg2rad(np.where(az > 180.0, az - 360.0, az))
        t, p = np.meshgrid(theta, az, indexing="ij")
        return t.reshape(-1), p.reshape(-1)

    def ray_directions(self) -> np.ndarray:
        t, p = self.emission_angles()
        return spherical_to_cartesian(np.stack([np.ones_like(t), t, p], axis=1))


@dataclass(frozen=True)
class ClassSpec:
    name: str
    kind: str  # "cuboid" | "cylinder"
    length: tuple
    width: tuple
    height: tuple
    reflectivity: tuple
    weight: float
    road_aligned: bool = True
    max_speed: float = 10.0


DEFAULT_CLASSES = (
    ClassSpec("car", "cuboid", (3.8, 4.8), (1.7, 2.0), (1.4, 1.7), (0.55, 0.9), 0.42),
    ClassSpec("truck", "cuboid", (6.5, 9.5), (2.3, 2.6), (2.8, 3.6), (0.3, 0.55), 0.16),
    ClassSpec("pedestrian", "cylinder", (0.5, 0.8), (0.5, 0.8), (1.55, 1.9), (0.15, 0.35), 0.22,
              road_aligned=False, max_speed=1.5),
    ClassSpec("cyclist", "cuboid", (1.6, 1.9), (0.5, 0.7), (1.5, 1.8), (0.35, 0.65), 0.20,
              max_speed=6.0),
)


@dataclass(frozen=True)
class DomainParams:
    """Scene statistics and gap switches for one domain."""

    domain: str = "sim"
    sensor_noise: tuple = (0.0, 0.0, 0.0)
    intensity: bool = False
    deform_shapes: bool = False
    deform_spread: float = 0.2
    deform_seed: int = 7
    ground_z: float = -1.8
    ground_reflectivity: tuple = (0.1, 0.25)
    n_objects: tuple = (8, 14)
    placement_range: float = 22.0

    def __post_init__(self):
        if self.domain not in ("sim", "real"):
            raise ValueError(f"unknown domain {self.domain!r}")
        object.__setattr__(self, "sensor_noise", tuple(float(v) for v in self.sensor_noise))
        object.__setattr__(self, "ground_reflectivity", tuple(self.ground_reflectivity))
        object.__setattr__(self, "n_objects", tuple(int(v) for v in self.n_objects))

    @property
    def channels(self) -> tuple:
        return REAL_CHANNELS if self.domain == "real" else ()


def sim_domain(**kw) -> DomainParams:
    return DomainParams(domain="sim", **kw)


def real_domain(noise=(0.05, 0.003, 0.003), **kw) -> DomainParams:
    kw.setdefault("intensity", True)
    kw.setdefault("deform_shapes", True)
    return DomainParams(domain="real", sensor_noise=noise, **kw)


def shape_factors(params: DomainParams, n_cls: int) -> np.ndarray:
    """Per-class (length, width, height) scale factors, drawn once per class."""
    if not params.deform_shapes:
        return np.ones((n_cls, 3))
    rng = keyed_generator(params.deform_seed, STREAM_SHAPE)
    return rng.uniform(1.0 - params.deform_spread, 1.0 + params.deform_spread, size=(n_cls, 3))


@dataclass(frozen=True)
class ObjectSpec:
    category_id: int
    kind: str
    box: Box3D
    reflectivity: float

    def __post_init__(self):
        if not 0.0 < self.reflectivity <= 1.0:
            raise ValueError("reflectivity must be in (0, 1]")
        if self.kind not in ("cuboid", "cylinder"):
            raise ValueError(f"unknown primitive {self.kind!r}")


@dataclass(frozen=True)
class SceneDescription:
    scene_id: int
    objects: tuple
    ground_z: float = -1.8
    domain: str = "sim"
    seed: int = 0
    ground_reflectivity: float = 0.2

    def validate(self) -> None:
        for i, o in enumerate(self.objects):
            if footprint_clearance(o.box) < EGO_RADIUS:
                raise ValueError(f"scene {self.scene_id}: object {i} intrudes on the "
                                 f"{EGO_RADIUS} m ego exclusion zone")


def footprint_clearance(box: Box3D) -> float:
    """Lower bound on the planar distance from the ego origin to the box."""
    return float(np.hypot(*box.center[:2]) - np.hypot(box.length, box.width) / 2)


def sample_scene(scene_id: int, seed: int, params: DomainParams,
                 classes: Sequence[ClassSpec] = DEFAULT_CLASSES) -> SceneDescription:
    rng = keyed_generator(seed, STREAM_LAYOUT)
    factors = shape_factors(params, len(classes))
    weights = np.array([c.weight for c in classes], dtype=np.float64)
    weights /= weights.sum()
    n_obj = int(rng.integers(params.n_objects[0], params.n_objects[1] + 1))
    placed: list = []
    discs: list = []
    R = params.placement_range
    for _ in range(n_obj):
        cid = int(rng.choice(len(classes), p=weights))
        spec = classes[cid]
        l = rng.uniform(*spec.length) * factors[cid, 0]
        w = (l if spec.kind == "cylinder" else rng.uniform(*spec.width) * factors[cid, 1])
        h = rng.uniform(*spec.height) * factors[cid, 2]
        if spec.road_aligned:
            yaw = 90.0 * int(rng.integers(0, 4)) + float(normal(rng, 4.0, 1)[0])
        else:
            yaw = rng.uniform(0.0, 360.0)
        refl = float(rng.uniform(*spec.reflectivity))
        speed = rng.uniform(0.0, spec.max_speed)
        radius = np.hypot(l, w) / 2
        for _attempt in range(30):
            x, y = rng.uniform(-R, R, size=2)
            if np.hypot(x, y) - radius < EGO_RADIUS + 0.5:
                continue
            if any(np.hypot(x - ox, y - oy) < radius + orad + 0.3 for ox, oy, orad in discs):
                continue
            yr = np.deg2rad(yaw)
            box = Box3D((x, y, params.ground_z + h / 2), l, w, h, yaw, cid,
                        speed * np.cos(yr), speed * np.sin(yr))
            placed.append(ObjectSpec(cid, spec.kind, box, refl))
            discs.append((x, y, radius))
            break
    g_refl = float(rng.uniform(*params.ground_reflectivity))
    return SceneDescription(scene_id, tuple(placed), params.ground_z, params.domain, seed, g_refl)


@dataclass
class RaycastResult:
    cloud: PointCloud
    boxes: list
    hit_object: np.ndarray  # per returned point: object index into scene.objects, or -1 for ground
    true_range: np.ndarray


def raycast_scene(scene: SceneDescription, lidar: LidarModel, intensity: bool | None = None) -> RaycastResult:
    """Cast every (beam, azimuth) ray and return the nearest hits.

    Noise from ``lidar.noise`` is applied in spherical coordinates. For the
    ``real`` domain the cloud carries intensity and timestamp channels.
    """
    scene.validate()
    theta, phi = lidar.emission_angles()
    dirs = lidar.ray_directions()
    objs = scene.objects
    if objs:
        centers = np.array([o.box.center for o in objs])
        halves = np.array([[o.box.length / 2, o.box.width / 2, o.box.height / 2] for o in objs])
        yaw = np.deg2rad([o.box.yaw for o in objs])
        kinds = np.array([kernels.KIND_CYLINDER if o.kind == "cylinder" else kernels.KIND_CUBOID
                          for o in objs])
    else:
        centers = halves = np.zeros((0, 3))
        yaw = np.zeros(0)
        kinds = np.zeros(0, dtype=np.int64)
    t, hit, cos_inc = kernels.raycast(dirs, centers, halves, np.cos(yaw), np.sin(yaw), kinds,
                                      float(scene.ground_z), float(lidar.max_range))
    ok = hit != kernels.HIT_NONE
    ray_idx = np.flatnonzero(ok)
    r = t[ok]
    hit = hit[ok]
    cos_inc = cos_inc[ok]

    if any(v > 0 for v in lidar.noise):
        rng = keyed_generator(scene.seed, STREAM_NOISE)
        n = len(r)
        dr, dt, dp = lidar.noise
        noisy = np.stack([r + normal(rng, dr, n), theta[ray_idx] + normal(rng, dt, n),
                          phi[ray_idx] + normal(rng, dp, n)], axis=1)
        xyz = spherical_to_cartesian(noisy)
        keep = (noisy[:, 0] > 0.0) & (noisy[:, 0] <= lidar.max_range)
    else:
        xyz = dirs[ray_idx] * r[:, None]
        keep = np.ones(len(r), dtype=bool)
    xyz, hit, r, cos_inc, ray_idx = xyz[keep], hit[keep], r[keep], cos_inc[keep], ray_idx[keep]

    if intensity is None:
        intensity = scene.domain == "real"
    if scene.domain == "real":
        refl = np.array([o.reflectivity for o in objs] + [scene.ground_reflectivity])
        inten = np.clip(refl[hit] * cos_inc, 0.0, 1.0) if intensity else np.zeros(len(hit))
        az_col = ray_idx % lidar.n_azimuth
        stamp = SWEEP_SECONDS * az_col / lidar.n_azimuth
        cloud = PointCloud(xyz, np.stack([inten, stamp], axis=1), REAL_CHANNELS, "real")
    else:
        cloud = PointCloud(xyz, None, (), "sim")
    counts = np.bincount(hit[hit >= 0], minlength=len(objs))
    boxes = [o.box for o, c in zip(objs, counts) if c > 0]
    return RaycastResult(cloud, boxes, hit, r)


# --------------------------------------------------------------------------- datasets

@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to regenerate a dataset bit for bit."""

    domain: DomainParams
    lidar: LidarModel = LidarModel()
    classes: tuple = DEFAULT_CLASSES

    def lidar_for_domain(self) -> LidarModel:
        return replace(self.lidar, noise=self.domain.sensor_noise)

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def generate_scene(spec: DatasetSpec, scene_id: int, seed: int) -> RaycastResult:
    scene = sample_scene(scene_id, seed, spec.domain, spec.classes)
    return raycast_scene(scene, spec.lidar_for_domain(), spec.domain.intensity)


def _scene_file(i: int) -> str:
    return f"clouds/{i:06d}.jpcd"


def _gen_one(job):
    out_dir, spec, i, seed = job
    res = generate_scene(spec, i, seed)
    path = Path(out_dir) / _scene_file(i)
    write_jpcd(path, res.cloud)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return i, seed, len(res.cloud), [label_line(i, b) for b in res.boxes], digest


def generate_dataset(out_dir, n_scenes: int, spec: DatasetSpec, base_seed: int,
                     workers: int = 1) -> dict:
    """Write ``n_scenes`` clouds, ``labels.jsonl`` and ``index.json`` to ``out_dir``.

    Scene ``i`` uses seed ``base_seed + i`` so the output does not depend on
    ``workers``.
    """
    out = Path(out_dir)
    try:
        (out / "clouds").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    jobs = [(str(out), spec, i, base_seed + i) for i in range(n_scenes)]
    if workers > 1 and n_scenes > 1:
        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.map(_gen_one, jobs, chunksize=max(1, n_scenes // (4 * workers)))
    else:
        results = [_gen_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    label_path = out / "labels.jsonl"
    with open(label_path, "w", encoding="utf-8", newline="\n") as fh:
        for _, _, _, lines, _ in results:
            for line in lines:
                fh.write(line + "\n")
    index = {
        "format": "jpcd-dataset",
        "version": 1,
        "domain": spec.domain.domain,
        "channels": list(spec.domain.channels),
        "base_seed": base_seed,
        "labels": "labels.jsonl",
        "generator": spec.to_json(),
        "scenes": [{"scene_id": i, "file": _scene_file(i), "seed": s, "n_points": n,
                    "n_boxes": len(lines), "sha256": dg}
                   for i, s, n, lines, dg in results],
    }
    with open(out / "index.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")
    log.info("wrote %d %s scenes to %s", n_scenes, spec.domain.domain, out)
    return index
