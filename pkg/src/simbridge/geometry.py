"""Coordinate transforms, box geometry and memory-bank index computation.

Frames are z-up with x forward. Spherical coordinates use ``theta`` as the
polar angle measured from +z and ``phi`` as the azimuth in ``(-pi, pi]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


def cartesian_to_spherical(xyz: np.ndarray) -> np.ndarray:
    """Map ``(..., 3)`` Cartesian points to ``(..., 3)`` rows of ``(r, theta, phi)``.

    Angles are evaluated with ``atan2`` which equals ``arccos(z / r)`` and
    ``sgn(y) * arccos(x / rho)`` wherever those are defined, but stays
    well-conditioned near the poles. The origin maps to ``(0, 0, 0)`` and the
    negative x-axis gets ``phi = pi``.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    rho = np.hypot(x, y)
    out = np.empty(xyz.shape, dtype=np.float64)
    out[..., 0] = np.sqrt(x * x + y * y + z * z)
    out[..., 1] = np.arctan2(rho, z)
    # atan2(+-0, negative) gives +-pi; fold -pi into pi so phi stays in (-pi, pi]
    phi = np.arctan2(y, x)
    out[..., 2] = np.where(phi == -np.pi, np.pi, phi)
    zero = out[..., 0] == 0.0
    if np.any(zero):
        out[zero] = 0.0
    return out


def spherical_to_cartesian(rtp: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cartesian_to_spherical`."""
    rtp = np.asarray(rtp, dtype=np.float64)
    r, t, p = rtp[..., 0], rtp[..., 1], rtp[..., 2]
    st = np.sin(t)
    out = np.empty(rtp.shape, dtype=np.float64)
    out[..., 0] = r * st * np.cos(p)
    out[..., 1] = r * st * np.sin(p)
    out[..., 2] = r * np.cos(t)
    return out


def normalize_yaw(yaw_deg: float) -> float:
    y = float(yaw_deg) % 360.0
    # tiny negative inputs round up to exactly 360.0
    return 0.0 if y >= 360.0 else y


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center, (length, width, height), yaw about z in degrees.

    ``center`` is the geometric center of the box. ``length`` runs along the
    heading direction.
    """

    center: tuple
    length: float
    width: float
    height: float
    yaw: float = 0.0
    category_id: int = 0
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 3 or not all(np.isfinite(c)):
            raise ValueError(f"box center must be 3 finite numbers, got {self.center!r}")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("box sizes must be strictly positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))
        object.__setattr__(self, "category_id", int(self.category_id))

    @property
    def size(self) -> tuple:
        return (self.length, self.width, self.height)

    @property
    def yaw_rad(self) -> float:
        return np.deg2rad(self.yaw)

    def corners_bev(self) -> np.ndarray:
        """Footprint corners, ``(4, 2)``, counter-clockwise."""
        c, s = np.cos(self.yaw_rad), np.sin(self.yaw_rad)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def to_json(self, scene_id=None) -> dict:
        d = {
            "category_id": self.category_id,
            "center": list(self.center),
            "size": [self.length, self.width, self.height],
            "yaw_deg": self.yaw,
            "vel": [self.vx, self.vy],
        }
        if scene_id is not None:
            d["scene_id"] = scene_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Box3D":
        l, w, h = d["size"]
        vx, vy = d.get("vel", (0.0, 0.0))
        return cls(tuple(d["center"]), l, w, h, d["yaw_deg"], d["category_id"], vx, vy)


class SectorIndex(NamedTuple):
    n_sc: int
    n_heading: int
    n_cls: int


@dataclass(frozen=True)
class PartitionConfig:
    """Angular x radial partition of the ego surroundings plus heading bins.

    Sector ``n_sc = azimuth_bin * n_radial + radial_bin``; the outermost
    radial bin is unbounded.
    """

    n_azimuth: int = 8
    radial_bounds: tuple = (5.0, 15.0, 35.0)
    n_heading: int = 32
    n_cls: int = 4

    def __post_init__(self):
        b = tuple(float(v) for v in self.radial_bounds)
        if any(v <= 0 for v in b) or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("radial_bounds must be positive and strictly ascending")
        if self.n_azimuth < 1 or self.n_heading < 1 or self.n_cls < 1:
            raise ValueError("partition counts must be >= 1")
        object.__setattr__(self, "radial_bounds", b)

    @property
    def n_radial(self) -> int:
        return len(self.radial_bounds) + 1

    @property
    def n_sc(self) -> int:
        return self.n_azimuth * self.n_radial

    @property
    def shape(self) -> tuple:
        return (self.n_sc, self.n_heading, self.n_cls)


def sector_indices(centers_xy: np.ndarray, yaw_deg: np.ndarray, cls: np.ndarray,
                   cfg: PartitionConfig) -> np.ndarray:
    """Vectorized sector/heading/class index, returns ``(M, 3)`` int64."""
    centers_xy = np.asarray(centers_xy, dtype=np.float64).reshape(-1, 2)
    x, y = centers_xy[:, 0], centers_xy[:, 1]
    ang = np.mod(np.arctan2(y, x), 2 * np.pi)
    a = np.floor(ang / (2 * np.pi / cfg.n_azimuth)).astype(np.int64)
    a = np.clip(a, 0, cfg.n_azimuth - 1)
    rho = np.hypot(x, y)
    rad = np.searchsorted(np.asarray(cfg.radial_bounds), rho, side="right")
    yaw = np.mod(np.asarray(yaw_deg, dtype=np.float64).reshape(-1), 360.0)
    yaw = np.where(yaw >= 360.0, 0.0, yaw)
    h = np.floor(yaw / (360.0 / cfg.n_heading)).astype(np.int64)
    h = np.clip(h, 0, cfg.n_heading - 1)
    c = np.asarray(cls, dtype=np.int64).reshape(-1)
    if np.any((c < 0) | (c >= cfg.n_cls)):
        raise ValueError(f"category id out of range [0, {cfg.n_cls})")
    return np.stack([a * cfg.n_radial + rad, h, c], axis=1)


def sector_index(box: Box3D, cfg: PartitionConfig) -> SectorIndex:
    idx = sector_indices(np.array(box.center[:2]), np.array([box.yaw]),
                         np.array([box.category_id]), cfg)[0]
    return SectorIndex(int(idx[0]), int(idx[1]), int(idx[2]))


def boxes_to_index(boxes: Sequence[Box3D], cfg: PartitionConfig) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 3), dtype=np.int64)
    return sector_indices(np.array([b.center[:2] for b in boxes]),
                          np.array([b.yaw for b in boxes]),
                          np.array([b.category_id for b in boxes]), cfg)


def to_box_frame(xyz: np.ndarray, box: Box3D) -> np.ndarray:
    """Express points in the box frame (translate by -center, rotate by -yaw)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    d = xyz - np.array(box.center)
    c, s = np.cos(box.yaw_rad), np.sin(box.yaw_rad)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 1]
    out[:, 1] = c * d[:, 1] - s * d[:, 0]
    out[:, 2] = d[:, 2]
    return out


def points_in_box(xyz: np.ndarray, box: Box3D, margin: float = 0.0) -> np.ndarray:
    """Indices of points inside ``box`` (boundary inclusive), optionally inflated."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(xyz) == 0:
        return np.zeros(0, dtype=np.int64)
    local = to_box_frame(xyz, box)
    half = np.array(box.size) / 2 + margin
    inside = np.all(np.abs(local) <= half, axis=1)
    return np.flatnonzero(inside)
