import numpy as np
import pytest

from har_kit.errors import DimensionError
from har_kit.optim import SGD, learning_rate, sgd_step
from har_kit.tensor import Tensor
from har_kit.types import LrSchedule, TrainConfig


@pytest.mark.parametrize(
    "epoch, expected", [(0, 0.1), (29, 0.1), (30, 0.01), (44, 0.01), (45, 0.001)]
)
def test_staircase_schedule(epoch, expected):
    assert learning_rate(LrSchedule(), epoch) == pytest.approx(expected)


def test_plain_step():
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    params, _ = sgd_step([np.array([1.0, 2.0])], [np.array([0.5, -1.0])], cfg, 0)
    assert np.allclose(params[0], [0.95, 2.1])


def test_momentum_accumulates():
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    w0 = np.array([0.0])
    g = np.array([1.0])
    params, velocity = sgd_step([w0], [g], cfg, 0)
    params, velocity = sgd_step(params, [g], cfg, 0, velocity)
    assert params[0] == pytest.approx(w0 - 2.9 * 0.1 * g)
    assert velocity[0] == pytest.approx([1.9])


def test_weight_decay_is_coupled():
    cfg = TrainConfig(momentum=0.0, weight_decay=0.5)
    params, _ = sgd_step([np.array([2.0])], [np.array([0.0])], cfg, 0)
    assert params[0] == pytest.approx([2.0 - 0.1 * 1.0])


def test_mismatched_lengths():
    with pytest.raises(DimensionError):
        sgd_step([np.zeros(2)], [], TrainConfig(), 0)


def test_sgd_class_updates_in_place():
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    p = Tensor.parameter([1.0, 1.0])
    frozen = Tensor.parameter([3.0])
    opt = SGD([p, frozen], cfg)
    p.grad = np.array([1.0, -1.0])
    opt.step(epoch=30)
    assert np.allclose(p.data, [0.99, 1.01])
    assert frozen.data.tolist() == [3.0]
    opt.zero_grad()
    assert p.grad is None
