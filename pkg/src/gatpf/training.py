"""Adam and the mini-batch training loop shared by every model."""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import EmptyMask, NonFiniteLoss

log = logging.getLogger(__name__)


class LossTarget(enum.Enum):
    POWER = "power"
    CURRENT = "current"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_target: LossTarget = LossTarget.POWER
    lr_decay: float = 1.0  # multiplicative per epoch
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.loss_target = LossTarget(self.loss_target)

    def to_dict(self):
        d = asdict(self)
        d["loss_target"] = self.loss_target.value
        return d


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def masked_mse(pred, target, mask=None):
    """Mean squared error over entries where ``mask`` is true (numpy inputs)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask selects no entries")
    d = (pred - target)[mask]
    return float(np.mean(d * d))


def power_loss(p_hat, q_hat, p, q, mask=None):
    """MSE over masked P and Q entries, both quantities weighted equally."""
    mask = np.ones(np.shape(p), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return masked_mse(np.concatenate([np.ravel(p_hat), np.ravel(q_hat)]),
                      np.concatenate([np.ravel(p), np.ravel(q)]),
                      np.concatenate([mask.ravel(), mask.ravel()]))


def tensor_mse(pred_parts, target_parts) -> ad.Tensor:
    """Differentiable MSE over concatenated prediction parts."""
    pred = ad.concat(pred_parts)
    target = np.concatenate(target_parts)
    return ad.mean(ad.square(pred - target))


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self):
        return asdict(self)


def fit(params, n_items, batch_loss, val_loss, cfg: TrainConfig, after_step=None):
    """Generic Adam loop.

    ``batch_loss(indices) -> Tensor`` builds the loss for a mini-batch of
    training item indices; ``val_loss() -> float`` scores the current
    parameters (``None`` selects on training loss). Parameters are restored to
    the best-scoring epoch before returning.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    hist = History()
    best = (np.inf, [p.data.copy() for p in params])
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_items)
        total, count = 0.0, 0
        for start in range(0, n_items, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = batch_loss(idx)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}; lower the learning rate")
            loss.backward()
            opt.step()
            if after_step is not None:
                after_step()
            total += value * len(idx)
            count += len(idx)
        train = total / count
        hist.train_loss.append(train)
        score = val_loss() if val_loss is not None else None
        if score is not None:
            hist.val_loss.append(score)
        key = score if score is not None else train
        if key < best[0]:
            best = (key, [p.data.copy() for p in params])
            hist.best_epoch = epoch
        opt.lr *= cfg.lr_decay
        log.debug("epoch %d train %.3e val %s", epoch, train, score)
    for p, saved in zip(params, best[1]):
        p.data = saved
    return hist
