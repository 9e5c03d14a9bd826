import logging
from collections.abc import Sequence

import numpy as np

from har_kit.errors import DimensionError
from har_kit.tensor import Tensor
from har_kit.types import LrSchedule, TrainConfig

logger = logging.getLogger(__name__)


def learning_rate(schedule: LrSchedule, epoch: int) -> float:
    """
    Staircase: the rate is multiplied by ``decay_factor`` once for every decay
    epoch that is <= ``epoch`` (epochs count from 0).
    """
    drops = sum(1 for e in schedule.decay_epochs if epoch >= e)
    return schedule.initial * schedule.decay_factor**drops


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    cfg: TrainConfig,
    epoch: int,
    velocity: list[np.ndarray] | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """
    Momentum SGD with coupled weight decay:

        v <- momentum * v + (g + weight_decay * w)
        w <- w - lr(epoch) * v

    Returns the new parameters and the new velocity buffers.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    lr = learning_rate(cfg.schedule, epoch)
    new_params = []
    new_velocity = []
    for w, g, v in zip(params, grads, velocity, strict=True):
        v = cfg.momentum * v + (g + cfg.weight_decay * w)
        new_velocity.append(v)
        new_params.append(w - lr * v)
    return new_params, new_velocity


class SGD:
    """
    Holds momentum buffers for a fixed parameter list and updates it in place
    from the ``grad`` fields left by a backward pass.
    """

    def __init__(self, params: Sequence[Tensor], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, epoch: int) -> None:
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        new_params, self.velocity = sgd_step(
            [p.data for p in self.params], grads, self.cfg, epoch, self.velocity
        )
        for p, w in zip(self.params, new_params, strict=True):
            p.data = w
