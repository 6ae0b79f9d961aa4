from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..data import WindowSample
from ..exceptions import TrainingDivergedError, ValidationError


@dataclass
class TrainLog:
    """Per-epoch losses. Entry 0 is the untrained model; ``best_epoch``
    indexes the lowest validation loss (earliest on ties)."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0

    def to_dict(self):
        return {"train_loss": list(self.train_loss), "val_loss": list(self.val_loss), "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train_loss"]), list(d["val_loss"]), int(d["best_epoch"]))


def stack_samples(samples):
    """Accept a list of ``WindowSample`` or an ``(X, Y)`` pair of arrays."""
    if isinstance(samples, tuple) and len(samples) == 2 and not isinstance(samples[0], WindowSample):
        X, Y = samples
        return np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    samples = list(samples)
    if not samples:
        return np.empty((0,)), np.empty((0,))
    return np.stack([s.input for s in samples]), np.stack([s.target for s in samples])


@torch.no_grad()
def _mse(model, x, y, batch_size, autoregressive):
    model.eval()
    total = 0.0
    for i in range(0, x.shape[0], batch_size):
        xb, yb = x[i : i + batch_size], y[i : i + batch_size]
        pred = model.generate(xb) if autoregressive else model(xb, yb)
        total += float(torch.sum((pred - yb) ** 2))
    return total / y.numel()


def train(model, train_samples, val_samples, *, autoregressive_val=True):
    """Fit ``model`` in place with Adam on mean squared error and return it
    loaded with its best-validation parameters, plus the ``TrainLog``.

    Mini-batch order and dropout draw from streams seeded by
    ``model.config.seed``; the global torch RNG is left untouched.
    """
    cfg = model.config
    X, Y = stack_samples(train_samples)
    Xv, Yv = stack_samples(val_samples)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValidationError("training and validation sets must be non-empty")
    for name, arr, tail in (("train X", X, (cfg.T, cfg.K)), ("train Y", Y, (cfg.F, cfg.K)),
                            ("val X", Xv, (cfg.T, cfg.K)), ("val Y", Yv, (cfg.F, cfg.K))):
        if arr.shape[1:] != tail:
            raise ValidationError(f"{name} has sample shape {arr.shape[1:]}, expected {tail}")
    dtype = model.dtype
    x, y = torch.as_tensor(X, dtype=dtype), torch.as_tensor(Y, dtype=dtype)
    xv, yv = torch.as_tensor(Xv, dtype=dtype), torch.as_tensor(Yv, dtype=dtype)
    n = x.shape[0]

    log = TrainLog()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    order_gen = torch.Generator().manual_seed(cfg.seed)

    log.train_loss.append(_mse(model, x, y, cfg.batch_size, autoregressive=False))
    log.val_loss.append(_mse(model, xv, yv, cfg.batch_size, autoregressive_val))
    best_state = copy.deepcopy(model.state_dict())
    since_best = 0

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed + 1)
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            perm = torch.randperm(n, generator=order_gen)
            running = 0.0
            for i in range(0, n, cfg.batch_size):
                idx = perm[i : i + cfg.batch_size]
                pred = model(x[idx], y[idx])
                loss = torch.mean((pred - y[idx]) ** 2)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch, float(loss.detach()))
                optimizer.zero_grad()
                loss.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                running += float(loss.detach()) * idx.numel()
            train_loss = running / n
            val_loss = _mse(model, xv, yv, cfg.batch_size, autoregressive_val)
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise TrainingDivergedError(epoch, val_loss if math.isfinite(train_loss) else train_loss)
            log.train_loss.append(train_loss)
            log.val_loss.append(val_loss)
            if val_loss < log.val_loss[log.best_epoch]:
                log.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
                since_best = 0
            else:
                since_best += 1
                if cfg.patience is not None and since_best >= cfg.patience:
                    break

    model.load_state_dict(best_state)
    model.eval()
    model.train_log = log
    return model, log
