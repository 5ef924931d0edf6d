"""Point cloud to dense BEV pillar statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..pcdio import PointCloud
from ..simulator import SWEEP_SECONDS

GEOMETRY_CHANNELS = ("count", "mean_z", "max_z", "mean_range")


@dataclass(frozen=True)
class BevGridConfig:
    """Square-celled grid symmetric about the ego; rows run along y, columns along x."""

    x_range: float = 24.0
    y_range: float = 24.0
    cell: float = 1.0
    z_offset: float = 1.8  # sensor height; centers z features on the ground

    def __post_init__(self):
        if self.cell <= 0 or self.x_range <= 0 or self.y_range <= 0:
            raise ValueError("grid ranges and cell size must be positive")
        if self.height * self.width <= 0:
            raise ValueError("grid must have at least one cell")

    @property
    def x_min(self) -> float:
        return -self.x_range

    @property
    def y_min(self) -> float:
        return -self.y_range

    @property
    def height(self) -> int:
        return int(round(2 * self.y_range / self.cell))

    @property
    def width(self) -> int:
        return int(round(2 * self.x_range / self.cell))

    def cell_of(self, x, y):
        """Integer ``(row, col)`` of the cell containing ``(x, y)``; may be out of range."""
        col = np.floor((np.asarray(x) - self.x_min) / self.cell).astype(np.int64)
        row = np.floor((np.asarray(y) - self.y_min) / self.cell).astype(np.int64)
        return row, col

    def cell_center(self, row, col):
        return (self.x_min + (np.asarray(col) + 0.5) * self.cell,
                self.y_min + (np.asarray(row) + 0.5) * self.cell)

    def contains(self, x, y) -> bool:
        row, col = self.cell_of(x, y)
        return bool(0 <= row < self.height and 0 <= col < self.width)


@dataclass
class PillarInput:
    """Raw per-cell statistics ``(H, W, C)``: geometry channels then mean of each point feature."""

    data: np.ndarray
    domain: str
    channels: tuple

    @property
    def n_channels(self) -> int:
        return self.data.shape[-1]


def synthetic_timestamp(xyz: np.ndarray) -> np.ndarray:
    # sweep starts at azimuth 0 and runs counter-clockwise
    az = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2 * np.pi)
    return SWEEP_SECONDS * az / (2 * np.pi)


def featurize(cloud: PointCloud, grid: BevGridConfig, sim_timestamp: bool = False) -> PillarInput:
    """Aggregate points into cells; points outside the grid are dropped.

    With ``sim_timestamp`` a geometry-only cloud gets an azimuth-derived
    timestamp channel appended.
    """
    xyz = cloud.xyz.astype(np.float64)
    feats = cloud.features.astype(np.float64)
    names = cloud.channels
    if sim_timestamp and cloud.domain == "sim":
        feats = np.concatenate([feats, synthetic_timestamp(xyz)[:, None]], axis=1)
        names = names + ("timestamp",)
    data = kernels.featurize_cells(xyz, feats, grid.x_min, grid.y_min, grid.cell,
                                   grid.height, grid.width)
    return PillarInput(data, cloud.domain, GEOMETRY_CHANNELS + tuple(names))


def normalize(p: PillarInput, grid: BevGridConfig) -> np.ndarray:
    """Fixed rescaling of raw pillar statistics into network inputs; empty cells stay zero."""
    x = p.data.copy()
    occ = x[..., 0] > 0
    x[..., 0] = np.log1p(x[..., 0])
    x[..., 1] = np.where(occ, (x[..., 1] + grid.z_offset) / 2.0, 0.0)
    x[..., 2] = np.where(occ, (x[..., 2] + grid.z_offset) / 2.0, 0.0)
    x[..., 3] = x[..., 3] / max(grid.x_range, grid.y_range)
    for j, name in enumerate(p.channels[4:], start=4):
        if name == "timestamp":
            x[..., j] = x[..., j] / SWEEP_SECONDS
    return x
