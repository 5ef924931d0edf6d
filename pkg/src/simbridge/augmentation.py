"""Spherical-coordinate jitter for noiseless simulation clouds.

Each point is converted to ``(r, theta, phi)``, perturbed by independent
zero-mean Gaussians and converted back. Streams are keyed by
``(base_seed, epoch, sample_id)``, so the same sample receives fresh noise
every epoch while any single draw stays reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import cartesian_to_spherical, spherical_to_cartesian
from .pcdio import PointCloud
from .rng import keyed_generator, normal


@dataclass(frozen=True)
class JitterConfig:
    """Standard deviations of the range (m) and angle (rad) noise."""

    delta_r: float = 0.01
    delta_theta: float = 0.0001
    delta_phi: float = 0.0001
    apply_to_real: bool = False

    def __post_init__(self):
        if min(self.delta_r, self.delta_theta, self.delta_phi) < 0:
            raise ValueError("jitter deviations must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.delta_r == 0 and self.delta_theta == 0 and self.delta_phi == 0


@dataclass
class NoiseDraw:
    """Per-point offsets, each ``(N,)``."""

    dr: np.ndarray
    dtheta: np.ndarray
    dphi: np.ndarray

    def __post_init__(self):
        self.dr = np.asarray(self.dr, dtype=np.float64).reshape(-1)
        self.dtheta = np.asarray(self.dtheta, dtype=np.float64).reshape(-1)
        self.dphi = np.asarray(self.dphi, dtype=np.float64).reshape(-1)
        if not len(self.dr) == len(self.dtheta) == len(self.dphi):
            raise ValueError("noise draw components must have equal length")

    def __len__(self):
        return len(self.dr)


def epoch_reseed(base_seed: int, epoch: int, sample_id: int) -> np.random.Generator:
    return keyed_generator(base_seed, epoch, sample_id)


def draw_noise(n: int, cfg: JitterConfig, rng: np.random.Generator) -> NoiseDraw:
    # fixed draw order: all range offsets, then polar, then azimuth
    return NoiseDraw(normal(rng, cfg.delta_r, n), normal(rng, cfg.delta_theta, n),
                     normal(rng, cfg.delta_phi, n))


def apply_noise(cloud: PointCloud, draw: NoiseDraw) -> PointCloud:
    if len(draw) != len(cloud):
        raise ValueError(f"noise draw has {len(draw)} rows for {len(cloud)} points")
    sph = cartesian_to_spherical(cloud.xyz.astype(np.float64))
    sph[:, 0] += draw.dr
    sph[:, 1] += draw.dtheta
    sph[:, 2] += draw.dphi
    return PointCloud(spherical_to_cartesian(sph), cloud.features.copy(), cloud.channels, cloud.domain)


def jitter(cloud: PointCloud, cfg: JitterConfig, rng: np.random.Generator) -> PointCloud:
    """Perturb every point independently; features pass through unchanged."""
    return apply_noise(cloud, draw_noise(len(cloud), cfg, rng))


def jitter_sample(cloud: PointCloud, cfg: JitterConfig, base_seed: int, epoch: int,
                  sample_id: int) -> PointCloud:
    """Training-time entry point: jitters sim clouds, passes real ones through."""
    if cloud.domain == "real" and not cfg.apply_to_real:
        return cloud
    return jitter(cloud, cfg, epoch_reseed(base_seed, epoch, sample_id))
