"""In-place optimizers over a ``dict`` of named parameter arrays"""

from typing import Dict

import numpy as np

from .config import TrainConfig
from .exceptions import ShapeMismatch
from .models import OptimizerKind


def _check_shapes(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, grad in grads.items():
        if name not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
        if np.shape(grad) != params[name].shape:
            raise ShapeMismatch(
                f"{name}: gradient shape {np.shape(grad)} != parameter shape {params[name].shape}"
            )


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """theta <- theta - lr * g"""
        _check_shapes(params, grads)
        for name, grad in grads.items():
            params[name] -= self.lr * grad


class Adam:
    """Adam with bias-corrected moments, one moment pair per parameter name"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        _check_shapes(params, grads)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            m_hat = m / bc1
            v_hat = v / bc2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def make_optimizer(config: TrainConfig):
    if config.optimizer is OptimizerKind.SGD:
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
