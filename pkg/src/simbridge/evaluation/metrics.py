"""Center-distance average precision.

Predictions are matched greedily in descending score order to the closest
unmatched ground-truth box of the same class in the same scene whose BEV
center lies within the threshold. AP is the area under the
precision-recall curve with precision interpolated as the maximum precision
at any equal or higher recall.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MatchConfig:
    thresholds: tuple = (0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if not t or any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be positive and strictly ascending")
        object.__setattr__(self, "thresholds", t)


@dataclass(frozen=True)
class Detection:
    scene_id: int
    category_id: int
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class GroundTruth:
    scene_id: int
    category_id: int
    x: float
    y: float


def _sorted_preds(preds):
    # tie-break on content so the result does not depend on input order
    return sorted(preds, key=lambda d: (-d.score, d.scene_id, d.x, d.y))


def match(preds, labels, threshold: float):
    """Greedy one-to-one matching; returns per-prediction TP flags in score order and the sorted preds."""
    preds = _sorted_preds(preds)
    by_scene: dict = {}
    for g in labels:
        by_scene.setdefault(g.scene_id, []).append(g)
    gts = {sid: (np.array([[g.x, g.y] for g in gs]), np.zeros(len(gs), dtype=bool))
           for sid, gs in by_scene.items()}
    tp = np.zeros(len(preds), dtype=bool)
    for i, d in enumerate(preds):
        if d.scene_id not in gts:
            continue
        xy, used = gts[d.scene_id]
        dist = np.hypot(xy[:, 0] - d.x, xy[:, 1] - d.y)
        dist[used] = np.inf
        # nearest free label; lexicographic tie-break on coordinates keeps it order-free
        cand = np.flatnonzero(dist == dist.min()) if len(dist) else []
        if len(cand) == 0 or dist[cand[0]] > threshold:
            continue
        j = min(cand, key=lambda k: (xy[k, 0], xy[k, 1]))
        used[j] = True
        tp[i] = True
    return tp, preds


def ap_from_flags(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * env))


def average_precision(preds, labels, category_id: int, threshold: float):
    """AP for one class and threshold; ``None`` when the class has no labels."""
    p = [d for d in preds if d.category_id == category_id]
    g = [x for x in labels if x.category_id == category_id]
    if not g:
        return None
    tp, _ = match(p, g, threshold)
    return ap_from_flags(tp, len(g))


@dataclass
class EvalReport:
    ap: dict  # class id -> {threshold: AP or None}
    class_ap: dict  # class id -> mean over thresholds or None
    mAP: float
    n_predictions: int
    n_labels: int
    class_names: tuple = ()

    def to_json(self) -> dict:
        return {
            "mAP": self.mAP,
            "class_ap": {str(k): v for k, v in self.class_ap.items()},
            "ap": {str(k): {repr(t): v for t, v in d.items()} for k, d in self.ap.items()},
            "n_predictions": self.n_predictions,
            "n_labels": self.n_labels,
            "class_names": list(self.class_names),
        }


def evaluate(preds, labels, n_cls: int, cfg: MatchConfig = MatchConfig(),
             class_names=()) -> EvalReport:
    ap, class_ap = {}, {}
    for c in range(n_cls):
        ap[c] = {t: average_precision(preds, labels, c, t) for t in cfg.thresholds}
        vals = [v for v in ap[c].values() if v is not None]
        class_ap[c] = float(np.mean(vals)) if vals else None
    present = [v for v in class_ap.values() if v is not None]
    m = float(np.mean(present)) if present else 0.0
    return EvalReport(ap, class_ap, m, len(preds), len(labels), tuple(class_names))


def flatten(scene_ids, detections_per_scene, labels_per_scene):
    """Turn per-scene ``(Box3D, score)`` lists and label lists into flat matcher inputs."""
    preds, gts = [], []
    for sid, dets, labs in zip(scene_ids, detections_per_scene, labels_per_scene):
        for box, score in dets:
            preds.append(Detection(sid, box.category_id, box.center[0], box.center[1], score))
        for b in labs:
            gts.append(GroundTruth(sid, b.category_id, b.center[0], b.center[1]))
    return preds, gts
