import numpy as np

from typing import Dict, Iterable, List, Tuple

from core.errors import ConfigurationError
from core.tensor import Tensor

__all__ = ["Optimizer", "SGD", "Adam", "build_optimizer"]


class Optimizer:
    """Updates named parameters in place from their accumulated gradients.

    ``step(scale)`` multiplies every gradient by ``scale`` first, which turns a
    sum accumulated over a batch into its mean.
    """

    def __init__(self, params: Iterable[Tuple[str, Tensor]], lr: float):
        if lr < 0:
            raise ConfigurationError(self.__class__.__name__, f"lr must be >= 0, got {lr}")
        self.params: List[Tuple[str, Tensor]] = list(params)
        self.lr = lr
        self.steps = 0

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self, scale: float = 1.0):
        self.steps += 1
        for name, p in self.params:
            if p.grad is not None:
                self.update(name, p, scale * p.grad)

    def update(self, name: str, p: Tensor, grad: np.ndarray):
        raise NotImplementedError


class SGD(Optimizer):

    def update(self, name, p, grad):
        p.data -= self.lr * grad


class Adam(Optimizer):
    """Adaptive first/second moment optimizer with bias correction."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params}

    def update(self, name, p, grad):
        self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
        self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad ** 2
        m_hat = self.m[name] / (1 - self.beta1 ** self.steps)
        v_hat = self.v[name] / (1 - self.beta2 ** self.steps)
        p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr)
    if kind == "sgd":
        return SGD(params, lr)
    raise ConfigurationError("optimizer", f"unknown optimizer '{kind}', expected adam or sgd")
