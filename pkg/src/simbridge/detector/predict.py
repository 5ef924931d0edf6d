"""Decoding dense head outputs into scored boxes."""
from __future__ import annotations

import numpy as np

from ..pcdio import PointCloud
from .features import featurize, normalize
from .losses import _sigmoid, decode_box
from .network import BevDetector, split_head


def decode(out: np.ndarray, model: BevDetector, score_threshold: float = 0.1,
           nms_radius: float = 1.0, max_boxes: int = 100) -> list:
    """``(Box3D, score)`` pairs from one ``(H, W, K)`` head output, highest score first."""
    cfg = model.cfg
    obj, cls_logit, reg = split_head(out, cfg.n_cls)
    score = _sigmoid(obj)
    rows, cols = np.nonzero(score >= score_threshold)
    if len(rows) == 0:
        return []
    s = score[rows, cols]
    # stable order: score descending, then raster order
    order = np.lexsort((rows * out.shape[1] + cols, -s))
    kept: list = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        box = decode_box(r, c, reg[r, c], int(np.argmax(cls_logit[r, c])), cfg.grid)
        if any(np.hypot(box.center[0] - b.center[0], box.center[1] - b.center[1]) < nms_radius
               for b, _ in kept):
            continue
        kept.append((box, float(s[k])))
        if len(kept) >= max_boxes:
            break
    return kept


def predict(cloud: PointCloud, model: BevDetector, score_threshold: float = 0.1,
            nms_radius: float = 1.0, sim_timestamp: bool = False) -> list:
    x = normalize(featurize(cloud, model.cfg.grid, sim_timestamp), model.cfg.grid)
    _, out, _ = model.forward(x[None], cloud.domain)
    return decode(out[0], model, score_threshold, nms_radius)
