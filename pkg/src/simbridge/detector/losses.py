"""Target assignment, box codec and the dense detection loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Box3D
from .features import BevGridConfig
from .network import N_BOX, split_head

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
SMOOTH_L1_BETA = 0.1


@dataclass(frozen=True)
class LossWeights:
    sma_lambda: float = 0.1
    omega_real: float = 1.0
    omega_sim: float = 0.1

    def __post_init__(self):
        if min(self.sma_lambda, self.omega_real, self.omega_sim) < 0:
            raise ValueError("loss weights must be non-negative")

    def omega(self, domain: str) -> float:
        return self.omega_real if domain == "real" else self.omega_sim


def encode_box(box: Box3D, grid: BevGridConfig):
    """``(row, col, target)`` for the cell holding the box center."""
    row, col = grid.cell_of(box.center[0], box.center[1])
    cx, cy = grid.cell_center(row, col)
    yr = box.yaw_rad
    target = np.array([box.center[0] - cx, box.center[1] - cy, box.center[2],
                       np.log(box.length), np.log(box.width), np.log(box.height),
                       np.sin(yr), np.cos(yr)])
    return int(row), int(col), target


def decode_box(row: int, col: int, reg: np.ndarray, category_id: int,
               grid: BevGridConfig) -> Box3D:
    cx, cy = grid.cell_center(row, col)
    yaw = np.rad2deg(np.arctan2(reg[6], reg[7]))
    return Box3D((cx + reg[0], cy + reg[1], reg[2]), float(np.exp(reg[3])),
                 float(np.exp(reg[4])), float(np.exp(reg[5])), yaw, category_id)


@dataclass
class Targets:
    heatmap: np.ndarray  # (H, W) soft targets, exactly 1 at positive cells
    pos_rows: np.ndarray
    pos_cols: np.ndarray
    cls: np.ndarray
    reg: np.ndarray  # (P, 8)
    n_ignored: int = 0  # boxes outside the grid
    n_collided: int = 0  # boxes whose cell was already taken


def assign_targets(boxes, grid: BevGridConfig) -> Targets:
    h, w = grid.height, grid.width
    heat = np.zeros((h, w))
    rows, cols, cls, regs = [], [], [], []
    taken = set()
    ignored = collided = 0
    yy, xx = np.mgrid[0:h, 0:w]
    for b in boxes:
        r, c, t = encode_box(b, grid)
        if not (0 <= r < h and 0 <= c < w):
            ignored += 1
            continue
        if (r, c) in taken:
            collided += 1
            continue
        taken.add((r, c))
        sigma = max(0.6, 0.25 * min(b.length, b.width) / grid.cell)
        g = np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * sigma * sigma))
        np.maximum(heat, g, out=heat)
        rows.append(r)
        cols.append(c)
        cls.append(b.category_id)
        regs.append(t)
    return Targets(heat, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                   np.array(cls, dtype=np.int64),
                   np.array(regs).reshape(-1, N_BOX), ignored, collided)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-_softplus(-x))


def detection_loss(out: np.ndarray, targets: Targets, n_cls: int, weight: float = 1.0):
    """Loss and ``d loss / d out`` for one sample, ``out`` is ``(H, W, 1 + n_cls + 8)``.

    Objectness uses a penalty-reduced focal loss over all cells, classes use
    softmax cross-entropy at the positive cells and box terms use smooth-L1 at
    the positive cells. All three are normalized by the positive count and
    the sum is scaled by ``weight``.
    """
    obj, cls_logit, reg = split_head(out, n_cls)
    grad = np.zeros_like(out)
    n_pos = len(targets.pos_rows)
    norm = max(1, n_pos)

    pos_mask = np.zeros(obj.shape, dtype=bool)
    pos_mask[targets.pos_rows, targets.pos_cols] = True
    p = _sigmoid(obj)
    log_p = -_softplus(-obj)
    log_1p = -_softplus(obj)
    neg_w = (1.0 - targets.heatmap) ** FOCAL_BETA
    a = FOCAL_ALPHA
    pos_loss = -((1 - p) ** a) * log_p
    neg_loss = -neg_w * p ** a * log_1p
    l_obj = float(np.sum(np.where(pos_mask, pos_loss, neg_loss))) / norm
    # d/dz of the focal terms with dp/dz = p (1 - p)
    g_pos = a * p * (1 - p) ** a * log_p - (1 - p) ** (a + 1)
    g_neg = -neg_w * (a * p ** a * (1 - p) * log_1p - p ** (a + 1))
    grad[..., 0] = np.where(pos_mask, g_pos, g_neg) / norm

    l_cls = l_reg = 0.0
    if n_pos:
        r, c = targets.pos_rows, targets.pos_cols
        logits = cls_logit[r, c]
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        l_cls = float(-logp[np.arange(n_pos), targets.cls].sum()) / norm
        g = np.exp(logp)
        g[np.arange(n_pos), targets.cls] -= 1.0
        grad[r, c, 1:1 + n_cls] = g / norm

        diff = reg[r, c] - targets.reg
        ad = np.abs(diff)
        small = ad < SMOOTH_L1_BETA
        l_reg = float(np.where(small, 0.5 * diff * diff / SMOOTH_L1_BETA, ad - 0.5 * SMOOTH_L1_BETA).sum()) / norm
        grad[r, c, 1 + n_cls:] = np.where(small, diff / SMOOTH_L1_BETA, np.sign(diff)) / norm

    total = weight * (l_obj + l_cls + l_reg)
    return total, grad * weight, {"obj": l_obj, "cls": l_cls, "reg": l_reg}
