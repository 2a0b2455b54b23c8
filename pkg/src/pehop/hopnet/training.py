"""Training loops: per-hop classification training and landmark pretraining."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from ..autodiff import functional as F
from ..autodiff.optim import make_optimizer, warmup_linear_decay
from ..autodiff.tensor import Tensor, no_grad
from ..errors import ConfigInvalid, MissingPrerequisite, NoPresentLandmarks
from .landmarks import LandmarkModel
from .model import HopPipeline, aggregate, widen_from

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    warmup_steps: int = 0
    decay: bool = False
    trust_coeff: float = 0.001
    weight_decay: float = 0.0
    seed: int = 0
    init_from_previous: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigInvalid("steps and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigInvalid("learning rate must be positive")
        if self.optimizer not in ("sgd", "lars"):
            raise ConfigInvalid(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)

    def build_optimizer(self, params):
        if self.optimizer == "sgd":
            return make_optimizer("sgd", params, lr=self.lr, momentum=self.momentum)
        return make_optimizer("lars", params, lr=self.lr, trust_coeff=self.trust_coeff,
                              weight_decay=self.weight_decay, momentum=self.momentum)

    def lr_at(self, step: int) -> float:
        if not self.decay and not self.warmup_steps:
            return self.lr
        total = self.steps if self.decay else 10 ** 12
        return max(warmup_linear_decay(step, self.lr, self.warmup_steps, total), 1e-12)


def _batches(n: int, cfg: TrainConfig):
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    for _ in range(cfg.steps):
        if cfg.batch_size >= n:
            yield np.arange(n)
        else:
            yield np.sort(rng.choice(n, cfg.batch_size, replace=False))


def _hop_logits(p: HopPipeline, x: Tensor, k: int) -> Tensor:
    """Forward to hop ``k`` with hops < k run frozen (eval mode, no tape)."""
    if k == 1:
        return p.encoders[0](x)[0]
    with no_grad():
        _, taps = p.encoders[0](x)
        for j in range(2, k):
            ctx = aggregate(p.aggregators[j - 2], taps, x)
            _, taps = p.encoders[j - 1](F.concat_channels(x, ctx))
    ctx = aggregate(p.aggregators[k - 2], taps, x)
    return p.encoders[k - 1](F.concat_channels(x, ctx))[0]


def train_hop(p: HopPipeline, slabs: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
              hop_index: int, augment: Optional[Callable[[np.ndarray, int], np.ndarray]] = None,
              ) -> list[float]:
    """Train hop ``hop_index`` (1-based); every other parameter stays frozen.

    ``augment(slab, sample_seed)`` is applied per sample when given.  Returns
    the per-step training loss.
    """
    if not 1 <= hop_index <= p.n_hops:
        raise ConfigInvalid(f"hop index {hop_index} outside 1..{p.n_hops}")
    missing = [k for k in range(1, hop_index) if k not in p.trained_hops]
    if missing:
        raise MissingPrerequisite(f"hop {hop_index} needs trained hops {missing}")
    if hop_index >= 2 and cfg.init_from_previous:
        widen_from(p.encoders[hop_index - 2], p.encoders[hop_index - 1])

    p.eval().freeze(True)
    active = p.hop_modules(hop_index)
    for m in active:
        m.train().freeze(False)
    params = [q for m in active for q in m.parameters()]
    opt = cfg.build_optimizer(params)

    labels = np.asarray(labels, dtype=np.int64)
    dtype = params[0].dtype
    trace = []
    for step, idx in enumerate(_batches(len(slabs), cfg)):
        batch = slabs[idx]
        if augment is not None:
            batch = np.stack([augment(s, cfg.seed ^ (step * len(slabs) + int(i)))
                              for s, i in zip(batch, idx)])
        opt.zero_grad()
        loss = F.softmax_cross_entropy(_hop_logits(p, Tensor(batch.astype(dtype)), hop_index),
                                       labels[idx])
        loss.backward()
        opt.step(cfg.lr_at(step))
        trace.append(float(loss.data))
        if step % 50 == 0:
            log.debug("hop %d step %d loss %.5f", hop_index, step, trace[-1])
    p.freeze(False)
    p.eval()
    p.trained_hops.add(hop_index)
    return trace


def predict_proba(p: HopPipeline, slabs: np.ndarray, batch_size: int = 32,
                  ablate_context: bool = False) -> np.ndarray:
    """(n_hops, N) PE probabilities in inference mode."""
    p.eval()
    dtype = p.encoders[0].first_conv.weight.dtype
    out = []
    with no_grad():
        for start in range(0, len(slabs), batch_size):
            x = Tensor(np.asarray(slabs[start:start + batch_size], dtype=dtype))
            logits = p(x, ablate_context=ablate_context)
            out.append(np.stack([F.softmax(l.data)[:, 1] for l in logits]))
    return np.concatenate(out, axis=1)


def hop_loss(p: HopPipeline, slabs, labels, hop_index: int, training_mode: bool = False) -> float:
    """Cross-entropy of hop ``hop_index`` over the whole set (no update)."""
    p.train(training_mode)
    if training_mode:
        # train-mode forward would move BN running stats; keep them intact
        saved = {k: v.copy() for k, v in p.named_buffers()}
    with no_grad():
        x = Tensor(np.asarray(slabs, dtype=p.encoders[0].first_conv.weight.dtype))
        logits = p(x, n_hops=hop_index)[hop_index - 1]
        loss = float(F.softmax_cross_entropy(logits, labels).data)
    if training_mode:
        for k, v in p.named_buffers():
            v[...] = saved[k]
    p.eval()
    return loss


def pretrain_landmarks(model: LandmarkModel, slabs: np.ndarray, targets: np.ndarray,
                       present: np.ndarray, cfg: TrainConfig) -> list[float]:
    """Masked-MSE regression of landmark targets.

    ``targets`` and ``present`` are (N, 3K); absent entries carry no loss.
    """
    present = np.asarray(present, dtype=np.float64)
    if not present.any():
        raise NoPresentLandmarks("no sample has a present landmark")
    targets = np.nan_to_num(np.asarray(targets, dtype=np.float64))
    model.train()
    params = model.parameters()
    opt = cfg.build_optimizer(params)
    dtype = params[0].dtype
    trace = []
    for step, idx in enumerate(_batches(len(slabs), cfg)):
        if not present[idx].any():
            trace.append(0.0)
            continue
        opt.zero_grad()
        pred = model(Tensor(slabs[idx].astype(dtype)))
        loss = F.mse_loss(pred, targets[idx], present[idx])
        loss.backward()
        opt.step(cfg.lr_at(step))
        trace.append(float(loss.data))
    model.eval()
    return trace
