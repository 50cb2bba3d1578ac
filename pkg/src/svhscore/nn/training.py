from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .core import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 200
    early_stop_patience: int | None = 10
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class FitResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def fit(net: nn.Module, n_train: int, batch_loss: Callable[[np.ndarray], torch.Tensor],
        cfg: TrainConfig, val_loss: Callable[[], float] | None = None,
        lr_at: Callable[[int], float] | None = None) -> FitResult:
    """Mini-batch Adam loop with best-epoch restore and early stopping.

    ``batch_loss`` receives an index array into the training set.
    ``lr_at`` maps the global step (0-based) to a learning rate.
    Epochs are 1-based in the result.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net, cfg.learning_rate)
    res = FitResult()
    best, best_state = float("inf"), None
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        net.train()
        order = rng.permutation(n_train)
        total, seen = 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if lr_at is not None:
                opt.lr = lr_at(step)
            opt.zero_grad()
            loss = batch_loss(idx)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
            step += 1
        res.train_loss.append(total / seen)
        res.stopped_epoch = epoch
        if val_loss is None:
            continue
        net.eval()
        with torch.no_grad():
            v = float(val_loss())
        res.val_loss.append(v)
        log.debug("epoch %d train %.5f val %.5f", epoch, res.train_loss[-1], v)
        if v < best:
            best, res.best_epoch = v, epoch
            best_state = copy.deepcopy(net.state_dict())
        elif cfg.early_stop_patience is not None and epoch - res.best_epoch >= cfg.early_stop_patience:
            break
    if best_state is not None:
        net.load_state_dict(best_state)
    else:
        res.best_epoch = res.stopped_epoch
    return res
