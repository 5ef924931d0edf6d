"""Rotated RoI-grid pooling on a BEV feature map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import BevGridConfig


@dataclass
class RoiCache:
    shape: tuple
    rows: np.ndarray  # (M, S, 4) flat cell indices of the bilinear taps
    weights: np.ndarray  # (M, S, 4)


def sample_points(boxes, grid_side: int) -> np.ndarray:
    """``(M, G*G, 2)`` world xy sample points spread uniformly over each rotated footprint."""
    if not boxes:
        return np.zeros((0, grid_side * grid_side, 2))
    u = (np.arange(grid_side) + 0.5) / grid_side - 0.5
    gu, gv = np.meshgrid(u, u, indexing="ij")
    gu, gv = gu.reshape(-1), gv.reshape(-1)
    out = np.empty((len(boxes), grid_side * grid_side, 2))
    for i, b in enumerate(boxes):
        lx, ly = gu * b.length, gv * b.width
        c, s = np.cos(b.yaw_rad), np.sin(b.yaw_rad)
        out[i, :, 0] = b.center[0] + c * lx - s * ly
        out[i, :, 1] = b.center[1] + s * lx + c * ly
    return out


def _taps(pts: np.ndarray, grid: BevGridConfig):
    h, w = grid.height, grid.width
    # continuous coordinates with cell centers on integers, clamped at the borders
    gx = np.clip((pts[..., 0] - grid.x_min) / grid.cell - 0.5, 0.0, w - 1)
    gy = np.clip((pts[..., 1] - grid.y_min) / grid.cell - 0.5, 0.0, h - 1)
    x0 = np.minimum(np.floor(gx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(gy).astype(np.int64), max(h - 2, 0))
    fx, fy = gx - x0, gy - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    rows = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return rows, wts


def roi_grid_pool(bev: np.ndarray, boxes, grid: BevGridConfig, grid_side: int = 4):
    """Average of bilinear samples over a ``grid_side`` x ``grid_side`` lattice per box.

    ``bev`` is ``(H, W, d)``; returns ``(M, d)`` features and a cache for the backward pass.
    """
    h, w, d = bev.shape
    pts = sample_points(list(boxes), grid_side)
    rows, wts = _taps(pts, grid)
    wts = wts / (grid_side * grid_side)
    flat = bev.reshape(h * w, d)
    feats = np.einsum("msk,mskd->md", wts, flat[rows]) if len(pts) else np.zeros((0, d))
    return feats, RoiCache(bev.shape, rows, wts)


def roi_grid_pool_backward(cache: RoiCache, d_feats: np.ndarray) -> np.ndarray:
    h, w, d = cache.shape
    d_flat = np.zeros((h * w, d))
    if len(d_feats):
        contrib = cache.weights[..., None] * d_feats[:, None, None, :]
        np.add.at(d_flat, cache.rows.reshape(-1), contrib.reshape(-1, d))
    return d_flat.reshape(h, w, d)
