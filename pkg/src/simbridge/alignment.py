"""Sectorized memory banks and the feature alignment loss.

A bank holds one momentum-averaged feature vector per (sector, heading bin,
class) entry. Features from one domain update that domain's bank; features
from the other domain are pulled toward the bank with a mean-squared error.
Entries that were never written are skipped by the loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PartitionConfig
from .rng import keyed_generator, normal


@dataclass
class ObjectFeatures:
    """Pooled per-object features ``(M, d)`` with their ``(M, 3)`` bank indices."""

    vectors: np.ndarray
    index: np.ndarray
    domain: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.index = np.asarray(self.index, dtype=np.int64).reshape(-1, 3)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.index):
            raise ValueError("vectors must be (M, d) with one index row per vector")

    def __len__(self):
        return len(self.vectors)

    @classmethod
    def empty(cls, d_feat: int, domain: str) -> "ObjectFeatures":
        return cls(np.zeros((0, d_feat)), np.zeros((0, 3), dtype=np.int64), domain)


class MemoryBank:
    def __init__(self, partition: PartitionConfig, d_feat: int, momentum: float = 0.9,
                 source_domain: str = "real", seed: int = 0, init_scale: float = 0.01):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.partition = partition
        self.d_feat = int(d_feat)
        self.momentum = float(momentum)
        self.source_domain = source_domain
        shape = partition.shape
        # random init; overwritten on first touch
        self.entries = normal(keyed_generator(seed, 0xBA4C), init_scale, shape + (self.d_feat,))
        self.valid = np.zeros(shape, dtype=bool)
        self.update_count = np.zeros(shape, dtype=np.int64)

    @property
    def shape(self) -> tuple:
        return self.entries.shape

    def _check(self, idx) -> tuple:
        idx = tuple(int(v) for v in idx)
        if len(idx) != 3 or any(not 0 <= v < n for v, n in zip(idx, self.valid.shape)):
            raise IndexError(f"memory index {idx} outside bank of shape {self.valid.shape}")
        return idx

    def update(self, idx, vector, domain: str | None = None) -> None:
        """Momentum update of one entry; the first write copies the vector."""
        if domain is not None and domain != self.source_domain:
            raise ValueError(f"{domain} features cannot update the {self.source_domain} bank")
        idx = self._check(idx)
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.d_feat,):
            raise ValueError(f"feature has shape {v.shape}, bank expects ({self.d_feat},)")
        if self.valid[idx]:
            m = self.momentum
            self.entries[idx] = m * self.entries[idx] + (1 - m) * v
        else:
            self.entries[idx] = v
            self.valid[idx] = True
        self.update_count[idx] += 1

    def update_from(self, feats: ObjectFeatures) -> None:
        # sequential in row order so repeated indices compound deterministically
        for v, idx in zip(feats.vectors, feats.index):
            self.update(idx, v, feats.domain)

    def lookup(self, index: np.ndarray):
        index = np.asarray(index, dtype=np.int64).reshape(-1, 3)
        for row in index:
            self._check(row)
        i, j, k = index.T
        return self.entries[i, j, k], self.valid[i, j, k]

    def coverage(self) -> float:
        return float(self.valid.mean())

    def summary(self) -> dict:
        norms = np.linalg.norm(self.entries, axis=-1)
        rows = []
        for (i, j, k), ok in np.ndenumerate(self.valid):
            rows.append({"sector": i, "heading": j, "class": k, "valid": bool(ok),
                         "update_count": int(self.update_count[i, j, k]),
                         "norm": float(norms[i, j, k])})
        return {"source_domain": self.source_domain, "momentum": self.momentum,
                "shape": list(self.shape), "coverage": self.coverage(),
                "n_valid": int(self.valid.sum()), "entries": rows}

    def to_tensors(self, prefix: str) -> dict:
        return {f"{prefix}.entries": self.entries.copy(),
                f"{prefix}.valid": self.valid.astype(np.float64),
                f"{prefix}.update_count": self.update_count.astype(np.float64)}

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str, partition: PartitionConfig,
                     momentum: float, source_domain: str) -> "MemoryBank":
        ent = np.asarray(tensors[f"{prefix}.entries"], dtype=np.float64)
        bank = cls(partition, ent.shape[-1], momentum, source_domain)
        if bank.entries.shape != ent.shape:
            raise ValueError(f"stored bank {ent.shape} does not match partition {bank.entries.shape}")
        bank.entries = ent.copy()
        bank.valid = np.asarray(tensors[f"{prefix}.valid"]) > 0.5
        bank.update_count = np.rint(tensors[f"{prefix}.update_count"]).astype(np.int64)
        return bank


def sma_loss(bank: MemoryBank, feats: ObjectFeatures):
    """Mean squared distance between features and their valid bank entries.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``feats.vectors``; rows
    whose entry is invalid get zero gradient and do not count toward the mean.
    The bank receives no gradient.
    """
    grad = np.zeros_like(feats.vectors)
    if len(feats) == 0:
        return 0.0, grad
    target, ok = bank.lookup(feats.index)
    m = int(ok.sum())
    if m == 0:
        return 0.0, grad
    diff = feats.vectors[ok] - target[ok]
    denom = m * feats.vectors.shape[1]
    grad[ok] = 2.0 * diff / denom
    return float(np.sum(diff * diff) / denom), grad


@dataclass
class WarmupState:
    threshold: int
    iteration: int = 0

    @property
    def active(self) -> bool:
        """True while still warming up (alignment loss disabled)."""
        return self.iteration < self.threshold

    def advance(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("warm-up counter cannot go backwards")
        self.iteration += n


@dataclass
class AlignmentStep:
    loss: float
    grad_real: np.ndarray
    grad_sim: np.ndarray
    loss_sim_to_real: float = 0.0  # sim features vs real bank
    loss_real_to_sim: float = 0.0  # real features vs sim bank


def bidirectional_step(real_bank: MemoryBank, sim_bank: MemoryBank, real: ObjectFeatures,
                       sim: ObjectFeatures, warmup: WarmupState) -> AlignmentStep:
    """Update both banks from their own domain, then align each domain to the other's bank.

    Banks are updated with detached copies before the loss is evaluated.
    During warm-up the loss is exactly zero. The caller advances ``warmup``.
    """
    real_bank.update_from(ObjectFeatures(real.vectors.copy(), real.index, real.domain))
    sim_bank.update_from(ObjectFeatures(sim.vectors.copy(), sim.index, sim.domain))
    if warmup.active:
        return AlignmentStep(0.0, np.zeros_like(real.vectors), np.zeros_like(sim.vectors))
    l_sim, g_sim = sma_loss(real_bank, sim)
    l_real, g_real = sma_loss(sim_bank, real)
    return AlignmentStep(l_sim + l_real, g_real, g_sim, l_sim, l_real)
