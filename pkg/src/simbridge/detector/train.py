"""Joint two-domain training loop.

Every iteration draws one real batch and one sim batch from independent
seeded epoch shuffles. The objective is

    total = omega_real * L_det(real) + omega_sim * L_det(sim) + lambda * L_align

where ``L_align`` comes from :func:`simbridge.alignment.bidirectional_step`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..alignment import MemoryBank, ObjectFeatures, WarmupState, bidirectional_step
from ..augmentation import JitterConfig, jitter_sample
from ..datasets import Dataset
from ..geometry import PartitionConfig, boxes_to_index
from ..rng import keyed_generator
from .features import featurize, normalize
from .losses import LossWeights, assign_targets, detection_loss
from .network import BevDetector, DetectorConfig
from .roi import roi_grid_pool, roi_grid_pool_backward

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iteration", "L_DET_real", "L_DET_sim", "L_SMA", "total")
_STREAM_REAL = 0x5EA1
_STREAM_SIM = 0x5133


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1200
    batch_real: int = 2
    batch_sim: int = 4
    lr: float = 0.02
    lr_momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    seed: int = 0
    use_sma: bool = True
    use_jitter: bool = True
    warmup: int = -1  # -1: one full pass over the real set
    bank_momentum: float = 0.9
    roi_grid: int = 4
    freeze: tuple = ()  # parameter-name prefixes excluded from updates
    sim_timestamp: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.batch_real < 1 or self.batch_sim < 1:
            raise ValueError("iterations must be >= 0 and batch sizes >= 1")
        object.__setattr__(self, "freeze", tuple(self.freeze))


class EpochSampler:
    """Endless stream of ``(epoch, position)`` pairs, reshuffled every epoch."""

    def __init__(self, n: int, seed: int, stream: int):
        self.n, self.seed, self.stream = n, seed, stream
        self.epoch = 0
        self._order = self._perm(0)
        self._pos = 0

    def _perm(self, epoch):
        return keyed_generator(self.seed, self.stream, epoch).permutation(self.n)

    def take(self, k: int) -> list:
        out = []
        for _ in range(k):
            if self._pos == self.n:
                self.epoch += 1
                self._order = self._perm(self.epoch)
                self._pos = 0
            out.append((self.epoch, int(self._order[self._pos])))
            self._pos += 1
        return out


class SGD:
    """Momentum SGD with cosine decay; parameters without a gradient this step are left untouched."""

    def __init__(self, params: dict, lr: float, momentum: float, weight_decay: float,
                 total_steps: int, grad_clip: float = 0.0):
        self.lr, self.mu, self.wd = lr, momentum, weight_decay
        self.total = max(1, total_steps)
        self.clip = grad_clip
        self.t = 0
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def current_lr(self) -> float:
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * min(self.t, self.total) / self.total))

    def step(self, params: dict, grads: dict) -> None:
        if self.clip > 0 and grads:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        lr = self.current_lr()
        for name in sorted(grads):
            g = grads[name]
            if self.wd and name.endswith(".W"):
                g = g + self.wd * params[name]
            v = self.velocity[name]
            v *= self.mu
            v += g
            params[name] -= lr * v
        self.t += 1


@dataclass
class TrainResult:
    model: BevDetector
    real_bank: MemoryBank | None
    sim_bank: MemoryBank | None
    metrics: list
    cfg: TrainConfig


class Trainer:
    def __init__(self, real: Dataset | None, sim: Dataset | None, det_cfg: DetectorConfig,
                 cfg: TrainConfig, weights: LossWeights = LossWeights(),
                 jitter: JitterConfig = JitterConfig(), partition: PartitionConfig = PartitionConfig()):
        self.real = real if real is not None and len(real) else None
        self.sim = sim if sim is not None and len(sim) else None
        if self.real is None and self.sim is None:
            raise ValueError("training needs at least one non-empty dataset")
        if self.sim is not None and cfg.sim_timestamp:
            det_cfg = _with_sim_channels(det_cfg, det_cfg.sim_channels + 1)
        self.cfg, self.weights, self.jitter, self.partition = cfg, weights, jitter, partition
        self.model = BevDetector(det_cfg, seed=cfg.seed)
        self.opt = SGD(self.model.params, cfg.lr, cfg.lr_momentum, cfg.weight_decay,
                       cfg.iterations, cfg.grad_clip)
        self.samplers = {}
        if self.real is not None:
            self.samplers["real"] = EpochSampler(len(self.real), cfg.seed, _STREAM_REAL)
        if self.sim is not None:
            self.samplers["sim"] = EpochSampler(len(self.sim), cfg.seed, _STREAM_SIM)
        self.real_bank = self.sim_bank = None
        if cfg.use_sma:
            d = det_cfg.d_feat
            self.real_bank = MemoryBank(partition, d, cfg.bank_momentum, "real", seed=cfg.seed)
            self.sim_bank = MemoryBank(partition, d, cfg.bank_momentum, "sim", seed=cfg.seed + 1)
        n_warm = cfg.warmup
        if n_warm < 0:
            n_warm = math.ceil(len(self.real) / cfg.batch_real) if self.real is not None else 0
        self.warmup = WarmupState(n_warm)
        self._input_cache: dict = {}
        self._target_cache: dict = {}
        self.metrics: list = []
        self.iteration = 0

    # ------------------------------------------------------------------ data
    def _dataset(self, domain):
        return self.real if domain == "real" else self.sim

    def _boxes(self, domain, pos):
        grid = self.model.cfg.grid
        return [b for b in self._dataset(domain).labels[pos] if grid.contains(b.center[0], b.center[1])]

    def _input(self, domain, epoch, pos) -> np.ndarray:
        ds = self._dataset(domain)
        grid = self.model.cfg.grid
        jit = domain == "sim" and self.cfg.use_jitter and not self.jitter.is_zero
        if not jit and (domain, pos) in self._input_cache:
            return self._input_cache[(domain, pos)]
        cloud = ds.clouds[pos]
        if jit:
            cloud = jitter_sample(cloud, self.jitter, self.cfg.seed, epoch, ds.scene_ids[pos])
        x = normalize(featurize(cloud, grid, self.cfg.sim_timestamp), grid)
        if not jit:
            self._input_cache[(domain, pos)] = x
        return x

    def _targets(self, domain, pos):
        key = (domain, pos)
        if key not in self._target_cache:
            self._target_cache[key] = assign_targets(self._boxes(domain, pos), self.model.cfg.grid)
        return self._target_cache[key]

    # ------------------------------------------------------------------ one step
    def compute(self, batches: dict):
        """Forward/backward for ``{"real": [(epoch, pos), ...], "sim": [...]}``.

        Returns ``(grads, row)`` with ``row`` matching :data:`METRIC_COLUMNS`
        minus the iteration.
        """
        model, w = self.model, self.weights
        det = {"real": 0.0, "sim": 0.0}
        state = {}
        for domain, items in batches.items():
            if not items:
                continue
            x = np.stack([self._input(domain, e, p) for e, p in items])
            bev, out, cache = model.forward(x, domain)
            d_out = np.zeros_like(out)
            total = 0.0
            for b, (_, p) in enumerate(items):
                l, g, _ = detection_loss(out[b], self._targets(domain, p), model.cfg.n_cls)
                total += l
                d_out[b] = g
            n = len(items)
            det[domain] = total / n
            d_out *= w.omega(domain) / n
            state[domain] = [items, bev, cache, d_out, np.zeros_like(bev)]

        l_sma = 0.0
        if self.cfg.use_sma:
            feats, pool = {}, {}
            for domain in ("real", "sim"):
                if domain not in state:
                    feats[domain] = ObjectFeatures.empty(model.cfg.d_feat, domain)
                    continue
                items, bev = state[domain][0], state[domain][1]
                vecs, idx, caches = [], [], []
                for b, (_, p) in enumerate(items):
                    boxes = self._boxes(domain, p)
                    f, c = roi_grid_pool(bev[b], boxes, model.cfg.grid, self.cfg.roi_grid)
                    vecs.append(f)
                    idx.append(boxes_to_index(boxes, self.partition))
                    caches.append((c, len(boxes)))
                feats[domain] = ObjectFeatures(np.concatenate(vecs), np.concatenate(idx), domain)
                pool[domain] = caches
            step = bidirectional_step(self.real_bank, self.sim_bank, feats["real"], feats["sim"],
                                      self.warmup)
            l_sma = step.loss
            if not self.warmup.active and w.sma_lambda > 0:
                for domain, g in (("real", step.grad_real), ("sim", step.grad_sim)):
                    if domain not in state or not len(g):
                        continue
                    off = 0
                    for b, (c, m) in enumerate(pool[domain]):
                        state[domain][4][b] = roi_grid_pool_backward(c, w.sma_lambda * g[off:off + m])
                        off += m

        grads: dict = {}
        for domain, (items, bev, cache, d_out, d_bev) in state.items():
            for k, g in model.backward(cache, d_out, d_bev).items():
                grads[k] = grads[k] + g if k in grads else g
        for k in list(grads):
            if any(k.startswith(f) for f in self.cfg.freeze):
                del grads[k]
        total = (w.omega_real * det["real"] + w.omega_sim * det["sim"]) + w.sma_lambda * l_sma
        return grads, (det["real"], det["sim"], l_sma, total)

    def next_batches(self) -> dict:
        out = {}
        if "real" in self.samplers:
            out["real"] = self.samplers["real"].take(self.cfg.batch_real)
        if "sim" in self.samplers:
            out["sim"] = self.samplers["sim"].take(self.cfg.batch_sim)
        return out

    def step(self, batches: dict | None = None) -> tuple:
        batches = self.next_batches() if batches is None else batches
        grads, row = self.compute(batches)
        if not all(math.isfinite(v) for v in row):
            raise TrainingDiverged(
                f"non-finite loss at iteration {self.iteration}: L_DET_real={row[0]!r} "
                f"L_DET_sim={row[1]!r} L_SMA={row[2]!r} lr={self.opt.current_lr():.3g}")
        self.opt.step(self.model.params, grads)
        self.warmup.advance()
        rec = (self.iteration,) + tuple(float(v) for v in row)
        self.metrics.append(rec)
        self.iteration += 1
        return rec

    def run(self, iterations: int | None = None, log_every: int = 100) -> TrainResult:
        n = self.cfg.iterations if iterations is None else iterations
        for _ in range(n):
            rec = self.step()
            if log_every and rec[0] % log_every == 0:
                log.info("it %d  real %.4f  sim %.4f  sma %.5f  total %.4f", *rec)
        return TrainResult(self.model, self.real_bank, self.sim_bank, self.metrics, self.cfg)


def _with_sim_channels(det_cfg: DetectorConfig, n: int) -> DetectorConfig:
    from dataclasses import replace
    return replace(det_cfg, sim_channels=n)


def train(real: Dataset | None, sim: Dataset | None, det_cfg: DetectorConfig = DetectorConfig(),
          cfg: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          jitter: JitterConfig = JitterConfig(), partition: PartitionConfig = PartitionConfig(),
          log_every: int = 100) -> TrainResult:
    return Trainer(real, sim, det_cfg, cfg, weights, jitter, partition).run(log_every=log_every)
