"""Mini-batch contrastive training of the fusion parameters."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding_io import TripletRecord
from .model import FusionParams, ModelConfig, batch_loss, init_params

log = logging.getLogger(__name__)


class NonFiniteLossError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    eval_every: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float | None = None

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    epoch_metrics: list = field(default_factory=list)
    wall_time: float = 0.0

    def epoch_mean_losses(self, steps_per_epoch: int) -> list[float]:
        n = steps_per_epoch
        return [float(np.mean(self.losses[i:i + n])) for i in range(0, len(self.losses), n)]


class Adam:
    """Adaptive moment estimation with bias correction over named arrays."""

    def __init__(self, names, shapes, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros(s) for n, s in zip(names, shapes)}
        self.v = {n: np.zeros(s) for n, s in zip(names, shapes)}

    def step(self, tensors: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.lr:
                tensors[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stack_batch(records: list[TripletRecord]):
    q_frames = np.stack([r.query_frames for r in records])
    text = np.stack([r.text for r in records])
    t_frames = np.stack([r.target.frames for r in records])
    q_audio = [r.query_audio for r in records]
    t_audio = [r.target.audio for r in records]
    if len({a.shape for a in q_audio + t_audio}) == 1:
        q_audio, t_audio = np.stack(q_audio), np.stack(t_audio)
    return q_frames, q_audio, text, t_frames, t_audio


def clip_gradients(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def train(triplets: list[TripletRecord], config: TrainConfig, params: FusionParams | None = None,
          model_config: ModelConfig | None = None, callback=None):
    """Train on ``triplets`` and return ``(params, log, step)``.

    ``callback(epoch, params)`` runs every ``config.eval_every`` epochs and
    its return value is appended to ``log.epoch_metrics``.
    """
    config.validate()
    if len(triplets) < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} triplets, got {len(triplets)}")
    if params is None:
        params = init_params(model_config or ModelConfig(), seed=config.seed)
    else:
        params = params.copy()
    names = params.trainable_names()
    opt = Adam(names, [params.tensors[n].shape for n in names], config.lr, tuple(config.betas), config.adam_eps)
    rng = np.random.default_rng(config.seed)
    train_log = TrainLog()
    start = time.perf_counter()
    n_batches = len(triplets) // config.batch_size  # trailing partial batch is dropped
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(triplets))
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [triplets[i] for i in idx]
            loss, grads = batch_loss(params, *stack_batch(batch))
            if not math.isfinite(loss):
                ids = ", ".join(r.id for r in batch)
                raise NonFiniteLossError(f"non-finite loss at step {step} (batch ids: {ids})")
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            opt.step(params.tensors, grads)
            train_log.losses.append(loss)
            step += 1
        log.info("epoch %d mean loss %.4f", epoch + 1, np.mean(train_log.losses[-n_batches:]))
        if callback is not None and config.eval_every and (epoch + 1) % config.eval_every == 0:
            train_log.epoch_metrics.append(callback(epoch + 1, params))
    train_log.wall_time = time.perf_counter() - start
    return params, train_log, step
