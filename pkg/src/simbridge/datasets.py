"""Loading generated datasets back into memory."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pcdio import read_jpcd, read_labels


class DatasetMissing(FileNotFoundError):
    pass


@dataclass
class Dataset:
    domain: str
    scene_ids: list
    clouds: list
    labels: list  # list of lists of Box3D, aligned with scene_ids
    channels: tuple = ()
    root: str = ""

    def __len__(self):
        return len(self.scene_ids)

    def subset(self, positions) -> "Dataset":
        positions = list(positions)
        return Dataset(self.domain, [self.scene_ids[i] for i in positions],
                       [self.clouds[i] for i in positions],
                       [self.labels[i] for i in positions], self.channels, self.root)

    def fraction(self, frac: float) -> "Dataset":
        """Every k-th scene so that about ``frac`` of the scenes remain (at least one)."""
        if frac >= 1.0 or len(self) == 0:
            return self
        n = max(1, int(round(len(self) * frac)))
        stride = len(self) / n
        return self.subset(sorted({int(i * stride) for i in range(n)}))

    def without_class(self, category_id: int) -> "Dataset":
        labels = [[b for b in boxes if b.category_id != category_id] for boxes in self.labels]
        return Dataset(self.domain, list(self.scene_ids), list(self.clouds), labels,
                       self.channels, self.root)

    def class_counts(self, n_cls: int) -> np.ndarray:
        out = np.zeros(n_cls, dtype=np.int64)
        for boxes in self.labels:
            for b in boxes:
                out[b.category_id] += 1
        return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    idx_path = root / "index.json"
    if not idx_path.is_file():
        raise DatasetMissing(f"no dataset at {root} (missing index.json); "
                             f"generate it first with `simbridge gen-sim`/`gen-real --out {root}`")
    with open(idx_path, encoding="utf-8") as fh:
        index = json.load(fh)
    labels = read_labels(root / index["labels"]) if index["scenes"] else {}
    ids, clouds, boxes = [], [], []
    for entry in index["scenes"]:
        sid = int(entry["scene_id"])
        ids.append(sid)
        clouds.append(read_jpcd(root / entry["file"], index["domain"]))
        boxes.append(labels.get(sid, []))
    return Dataset(index["domain"], ids, clouds, boxes, tuple(index["channels"]), str(root))
