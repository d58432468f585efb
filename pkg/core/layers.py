import numpy as np

from typing import Iterator, Tuple

from core import ops
from core.tensor import Tensor

__all__ = ["Layer", "Conv1d", "BatchNorm", "Dense", "he_uniform"]


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform initialization, U(-sqrt(6 / fan_in), sqrt(6 / fan_in))."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """A named group of parameters.

    Parameters are yielded in build order; that order is the checkpoint order.
    """

    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())


class Conv1d(Layer):
    """Convolution parameters of shape (L, C_in, C_out) plus bias."""

    def __init__(self, name: str, length: int, c_in: int, c_out: int,
                 rng: np.random.Generator, stride: int = 1, padding: str = "valid"):
        super().__init__(name)
        self.stride, self.padding = stride, padding
        self.weight = Tensor(he_uniform(rng, (length, c_in, c_out), fan_in=length * c_in),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def __repr__(self):
        length, c_in, c_out = self.weight.shape
        return f"Conv({length},{self.stride},{c_out}) <- {c_in}"

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self):
        yield self.weight.name, self.weight
        yield self.bias.name, self.bias


class BatchNorm(Layer):
    """Affine batch-norm parameters plus running statistics."""

    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.gamma = Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta")
        self.state = ops.BatchNormState(channels)

    def __repr__(self):
        return f"BN({self.gamma.shape[0]})"

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.state, mode=mode)

    def parameters(self):
        yield self.gamma.name, self.gamma
        yield self.beta.name, self.beta

    def buffers(self):
        yield f"{self.name}.running_mean", self.state.running_mean
        yield f"{self.name}.running_var", self.state.running_var

    def load_buffers(self, running_mean: np.ndarray, running_var: np.ndarray):
        self.state.running_mean = running_mean.copy()
        self.state.running_var = running_var.copy()


class Dense(Layer):
    """Fully-connected layer, W of shape (D_in, D_out)."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__(name)
        self.weight = Tensor(he_uniform(rng, (d_in, d_out), fan_in=d_in),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.bias")

    def __repr__(self):
        return f"FC({self.weight.shape[1]}) <- {self.weight.shape[0]}"

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)

    def parameters(self):
        yield self.weight.name, self.weight
        yield self.bias.name, self.bias
