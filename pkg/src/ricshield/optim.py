"""Adam with bias correction plus the reduce-on-plateau / early-stop schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 4e-3
    early_stop_patience: int = 8
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")


class Adam:
    """Standard bias-corrected Adam over a named parameter collection."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
            m, v = self.moments[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """ReduceLROnPlateau plus early stopping, both driven by validation loss.

    Improvement means strictly lower loss. The plateau clock resets after each
    reduction; the early-stop clock only resets on improvement.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.best = float("inf")
        self.since_best = 0
        self.since_plateau = 0

    def update(self, val_loss: float) -> tuple[float, bool, bool]:
        """Returns (lr, stop, is_best) for the epoch that just finished."""
        is_best = val_loss < self.best
        if is_best:
            self.best = val_loss
            self.since_best = 0
            self.since_plateau = 0
        else:
            self.since_best += 1
            self.since_plateau += 1
            if self.since_plateau >= self.cfg.plateau_patience:
                self.lr = max(self.lr * self.cfg.plateau_factor, self.cfg.min_lr)
                self.since_plateau = 0
        return self.lr, self.since_best >= self.cfg.early_stop_patience, is_best


def lr_schedule(val_losses: list[float], cfg: TrainConfig) -> tuple[float, bool, bool]:
    """Replay a validation-loss history through the scheduler.

    Returns the state after the last epoch: (lr, stop flag, whether the last
    epoch produced the best weights so far).
    """
    sched = PlateauScheduler(cfg)
    lr, stop, is_best = sched.lr, False, False
    for loss in val_losses:
        lr, stop, is_best = sched.update(loss)
    return lr, stop, is_best
