from abc import ABC, abstractmethod

import numpy as np

from visualrec.models.base import ModelParams
from visualrec.numeric.core import FloatArray
from visualrec.training.config import TrainConfig


class Optimizer(ABC):
    """Applies a gradient to parameters in place, tensor by tensor in checkpoint order."""

    def __init__(self, learning_rate: float) -> None:
        self.learning_rate = learning_rate

    def step(self, params: ModelParams, grad: ModelParams) -> None:
        pairs = zip(params.named_tensors(), grad.named_tensors(), strict=True)
        for slot, ((_, t), (_, g)) in enumerate(pairs):
            self._update(slot, t, g)

    @abstractmethod
    def _update(self, slot: int, tensor: FloatArray, grad: FloatArray) -> None:
        """Update one tensor in place"""


class SGD(Optimizer):
    def _update(self, slot: int, tensor: FloatArray, grad: FloatArray) -> None:
        tensor -= self.learning_rate * grad


class Momentum(Optimizer):
    """Heavy-ball momentum: v <- mu v + g; x <- x - lr v."""

    def __init__(self, learning_rate: float, momentum: float = 0.9) -> None:
        super().__init__(learning_rate)
        self.momentum = momentum
        self._velocity: dict[int, FloatArray] = {}

    def _update(self, slot: int, tensor: FloatArray, grad: FloatArray) -> None:
        v = self._velocity.setdefault(slot, np.zeros_like(tensor))
        v *= self.momentum
        v += grad
        tensor -= self.learning_rate * v


class Adam(Optimizer):
    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._m: dict[int, FloatArray] = {}
        self._v: dict[int, FloatArray] = {}
        self._t = 0

    def step(self, params: ModelParams, grad: ModelParams) -> None:
        self._t += 1
        super().step(params, grad)

    def _update(self, slot: int, tensor: FloatArray, grad: FloatArray) -> None:
        m = self._m.setdefault(slot, np.zeros_like(tensor))
        v = self._v.setdefault(slot, np.zeros_like(tensor))
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1**self._t)
        v_hat = v / (1 - self.beta2**self._t)
        tensor -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def make_optimizer(config: TrainConfig) -> Optimizer:
    match config.optimizer:
        case "sgd":
            return SGD(config.learning_rate)
        case "momentum":
            return Momentum(config.learning_rate, config.momentum)
        case "adam":
            return Adam(
                config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon
            )
