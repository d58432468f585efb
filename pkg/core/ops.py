"""Differentiable operations used by the backbone and the fusion heads.

All ops take and return :class:`Tensor`; shapes follow the per-example layout
(time, channels) used throughout TagASC.
"""
import numpy as np

from numpy.lib.stride_tricks import sliding_window_view
from typing import Optional, Union

from core.errors import ConfigurationError, DataError, DegenerateBatchError, DimensionError
from core.tensor import Function, Tensor

__all__ = ["BatchNormState", "conv1d", "leaky_relu", "batch_norm", "max_pool1d",
           "global_avg_pool", "global_max_pool", "dense", "softmax_segments",
           "softmax_cross_entropy", "add", "mul", "scale_channels", "concat",
           "sum_all", "square", "BN_EPSILON", "BN_MOMENTUM"]


BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


# --------------------------------------------------------------------------
# Convolution
# --------------------------------------------------------------------------
class Conv1d(Function):

    def forward(self, x, w, b, stride=1, padding="valid"):
        if x.ndim != 2 or w.ndim != 3 or b.ndim != 1:
            raise DimensionError("conv1d", f"expected x (T, C_in), w (L, C_in, C_out), b (C_out,), "
                                           f"got {x.shape}, {w.shape}, {b.shape}")
        length, c_in, c_out = w.shape
        if x.shape[1] != c_in:
            raise DimensionError("conv1d", f"input channels {x.shape[1]} != weight C_in {c_in}")
        if b.shape[0] != c_out:
            raise DimensionError("conv1d", f"bias length {b.shape[0]} != weight C_out {c_out}")
        if stride < 1:
            raise ConfigurationError("conv1d", f"stride must be >= 1, got {stride}")

        if padding == "same":
            if stride != 1:
                raise ConfigurationError("conv1d", "'same' padding requires stride 1")
            pad_left = (length - 1) // 2
            pad_right = length - 1 - pad_left
        elif padding == "valid":
            pad_left = pad_right = 0
        else:
            raise ConfigurationError("conv1d", f"unknown padding mode '{padding}'")

        xp = np.pad(x, ((pad_left, pad_right), (0, 0))) if pad_left or pad_right else x
        if xp.shape[0] < length:
            raise DimensionError("conv1d", f"input length {x.shape[0]} < filter length {length}")

        # windows: (T_out, C_in, L)
        windows = sliding_window_view(xp, length, axis=0)[::stride]
        self.windows, self.w = windows, w
        self.stride, self.pad_left = stride, pad_left
        self.x_len, self.xp_len = x.shape[0], xp.shape[0]
        return np.tensordot(windows, w, axes=([2, 1], [0, 1])) + b

    def backward(self, grad):
        length = self.w.shape[0]
        t_out = grad.shape[0]
        gw = np.tensordot(self.windows, grad, axes=([0], [0])).transpose(1, 0, 2)
        gb = grad.sum(axis=0)
        gxp = np.zeros((self.xp_len, self.w.shape[1]))
        stop = self.stride * (t_out - 1) + 1
        for k in range(length):
            gxp[k:k + stop:self.stride] += grad @ self.w[k].T
        gx = gxp[self.pad_left:self.pad_left + self.x_len]
        return gx, gw, gb


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "valid") -> Tensor:
    """1-D convolution over the time axis.

    Args:
        x: (T_in, C_in).
        weight: (L, C_in, C_out).
        bias: (C_out,).
        stride: hop between windows.
        padding: 'valid' (no padding) or 'same' (zero padding, stride 1 only).

    Returns:
        (T_out, C_out) with T_out = floor((T_in - L) / stride) + 1 for 'valid'
        and T_out = T_in for 'same'.
    """
    return Conv1d.apply(x, weight, bias, stride=stride, padding=padding)


# --------------------------------------------------------------------------
# Activations and normalization
# --------------------------------------------------------------------------
class LeakyReLU(Function):

    def forward(self, x, slope=0.3):
        self.mask = np.where(x > 0, 1.0, slope)
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


def leaky_relu(x: Tensor, slope: float = 0.3) -> Tensor:
    if not 0 < slope < 1:
        raise ConfigurationError("leaky_relu", f"slope must be in (0, 1), got {slope}")
    return LeakyReLU.apply(x, slope=slope)


class BatchNormState:
    """Running statistics of one batch-norm layer.

    Attributes:
        running_mean: per-channel mean used in infer mode.
        running_var: per-channel (unbiased) variance used in infer mode.
        momentum: weight of the old value in the running update.
        eps: variance floor.
    """

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON):
        if eps <= 0:
            raise ConfigurationError("batch_norm", f"epsilon must be > 0, got {eps}")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __repr__(self):
        return f"[{self.__class__.__name__}] ({self.running_mean.shape[0]})"

    def update(self, mean: np.ndarray, var: np.ndarray):
        self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
        self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var


class BatchNorm(Function):

    def forward(self, x, gamma, beta, state=None, mode="train"):
        if x.ndim != 2 or x.shape[1] != gamma.shape[0] or gamma.shape != beta.shape:
            raise DimensionError("batch_norm", f"x {x.shape}, gamma {gamma.shape}, "
                                               f"beta {beta.shape} disagree")
        self.gamma, self.mode = gamma, mode
        if mode == "train":
            n = x.shape[0]
            if n < 2:
                raise DegenerateBatchError("batch_norm", f"train mode needs T >= 2, got T = {n}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if state is not None:
                state.update(mean, var * n / (n - 1))
        elif mode == "infer":
            mean, var = state.running_mean, state.running_var
        else:
            raise ConfigurationError("batch_norm", f"unknown mode '{mode}'")
        eps = state.eps if state is not None else BN_EPSILON
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = (x - mean) * self.inv_std
        return self.x_hat * gamma + beta

    def backward(self, grad):
        g_gamma = (grad * self.x_hat).sum(axis=0)
        g_beta = grad.sum(axis=0)
        g_xhat = grad * self.gamma
        if self.mode == "infer":
            return g_xhat * self.inv_std, g_gamma, g_beta
        n = grad.shape[0]
        gx = (self.inv_std / n) * (n * g_xhat - g_xhat.sum(axis=0)
                                   - self.x_hat * (g_xhat * self.x_hat).sum(axis=0))
        return gx, g_gamma, g_beta


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: Optional[BatchNormState] = None,
               mode: str = "train") -> Tensor:
    """Batch normalization over the time axis of a (T, C) map.

    Train mode normalizes by the statistics of x and updates ``state``; infer
    mode uses the running statistics held by ``state``.
    """
    if mode == "infer" and state is None:
        raise ConfigurationError("batch_norm", "infer mode requires running statistics")
    return BatchNorm.apply(x, gamma, beta, state=state, mode=mode)


# --------------------------------------------------------------------------
# Pooling
# --------------------------------------------------------------------------
class MaxPool1d(Function):

    def forward(self, x, k=3):
        t, c = x.shape
        t_out = t // k
        windows = x[:t_out * k].reshape(t_out, k, c)
        self.idx = windows.argmax(axis=1)  # first index on ties
        self.in_shape, self.k = x.shape, k
        return np.take_along_axis(windows, self.idx[:, None, :], axis=1)[:, 0, :]

    def backward(self, grad):
        t, c = self.in_shape
        t_out = grad.shape[0]
        g_windows = np.zeros((t_out, self.k, c))
        np.put_along_axis(g_windows, self.idx[:, None, :], grad[:, None, :], axis=1)
        gx = np.zeros(self.in_shape)
        gx[:t_out * self.k] = g_windows.reshape(t_out * self.k, c)
        return (gx,)


def max_pool1d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping max pooling over time; the remainder is truncated."""
    if x.data.ndim != 2:
        raise DimensionError("max_pool1d", f"expected (T, C), got {x.shape}")
    if k < 1:
        raise ConfigurationError("max_pool1d", f"k must be >= 1, got {k}")
    if x.shape[0] < k:
        raise DimensionError("max_pool1d", f"T = {x.shape[0]} < k = {k}")
    return MaxPool1d.apply(x, k=k)


class GlobalAvgPool(Function):

    def forward(self, x):
        self.t = x.shape[0]
        return x.mean(axis=0)

    def backward(self, grad):
        return (np.broadcast_to(grad / self.t, (self.t, grad.shape[0])).copy(),)


class GlobalMaxPool(Function):

    def forward(self, x):
        self.idx = x.argmax(axis=0)
        self.in_shape = x.shape
        return x[self.idx, np.arange(x.shape[1])]

    def backward(self, grad):
        gx = np.zeros(self.in_shape)
        gx[self.idx, np.arange(self.in_shape[1])] = grad
        return (gx,)


def _check_time_axis(x: Tensor, name: str):
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(name, f"expected a non-empty (T, C) map, got {x.shape}")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_time_axis(x, "global_avg_pool")
    return GlobalAvgPool.apply(x)


def global_max_pool(x: Tensor) -> Tensor:
    _check_time_axis(x, "global_max_pool")
    return GlobalMaxPool.apply(x)


# --------------------------------------------------------------------------
# Fully-connected
# --------------------------------------------------------------------------
class Dense(Function):

    def forward(self, x, w, b):
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, grad):
        return self.w @ grad, np.outer(self.x, grad), grad


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W + b for a single vector x of shape (D_in,)."""
    if x.data.ndim != 1 or weight.data.ndim != 2 or x.shape[0] != weight.shape[0] \
            or bias.shape != (weight.shape[1],):
        raise DimensionError("dense", f"x {x.shape}, W {weight.shape}, b {bias.shape} disagree")
    return Dense.apply(x, weight, bias)


# --------------------------------------------------------------------------
# Softmax family
# --------------------------------------------------------------------------
class SoftmaxSegments(Function):

    def forward(self, x, heads=1):
        seg = x.reshape(heads, -1)
        e = np.exp(seg - seg.max(axis=1, keepdims=True))
        self.out = e / e.sum(axis=1, keepdims=True)
        return self.out.reshape(-1)

    def backward(self, grad):
        g = grad.reshape(self.out.shape)
        gx = self.out * (g - (g * self.out).sum(axis=1, keepdims=True))
        return (gx.reshape(-1),)


def softmax_segments(x: Tensor, h: int) -> Tensor:
    """Independent softmax over each of h contiguous segments of length f/h."""
    if x.data.ndim != 1:
        raise DimensionError("softmax_segments", f"expected a vector, got {x.shape}")
    if h < 1 or x.shape[0] % h != 0:
        raise ConfigurationError("softmax_segments",
                                 f"h = {h} does not divide f = {x.shape[0]}")
    return SoftmaxSegments.apply(x, heads=h)


class SoftmaxCrossEntropy(Function):

    def forward(self, logits, target=None):
        shifted = logits - logits.max()
        log_z = np.log(np.exp(shifted).sum())
        log_p = shifted - log_z
        self.p, self.target = np.exp(log_p), target
        return np.array(-(target * log_p).sum())

    def backward(self, grad):
        return (grad * (self.p - self.target),)


def softmax_cross_entropy(logits: Tensor, target: Union[int, np.ndarray]) -> Tensor:
    """Cross-entropy between softmax(logits) and a class index or a soft distribution."""
    if logits.data.ndim != 1 or logits.shape[0] < 2:
        raise DimensionError("softmax_cross_entropy", f"need K >= 2 logits, got {logits.shape}")
    k = logits.shape[0]
    if np.isscalar(target) or np.ndim(target) == 0:
        index = int(target)
        if not 0 <= index < k:
            raise DataError("softmax_cross_entropy", f"target index {index} out of range [0, {k})")
        dist = np.zeros(k)
        dist[index] = 1.0
    else:
        dist = np.asarray(target, dtype=np.float64)
        if dist.shape != (k,):
            raise DimensionError("softmax_cross_entropy", f"soft target {dist.shape} != ({k},)")
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise DataError("softmax_cross_entropy", "soft target must be a distribution")
    return SoftmaxCrossEntropy.apply(logits, target=dist)


# --------------------------------------------------------------------------
# Elementwise helpers
# --------------------------------------------------------------------------
class Add(Function):

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Mul(Function):

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class ScaleChannels(Function):

    def forward(self, m, a):
        self.m, self.a = m, a
        return m * a[None, :]

    def backward(self, grad):
        return grad * self.a[None, :], (grad * self.m).sum(axis=0)


class Concat(Function):

    def forward(self, *xs):
        self.sizes = [x.shape[0] for x in xs]
        return np.concatenate(xs)

    def backward(self, grad):
        bounds = np.cumsum([0] + self.sizes)
        return tuple(grad[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


class SumAll(Function):

    def forward(self, x):
        self.shape = x.shape
        return np.array(x.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


def _same_shape(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape:
        raise DimensionError(name, f"shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Mul.apply(a, b)


def square(x: Tensor) -> Tensor:
    return Mul.apply(x, x)


def scale_channels(m: Tensor, a: Tensor) -> Tensor:
    """m[t, i] * a[i] for every time step t."""
    if m.data.ndim != 2 or a.data.ndim != 1 or m.shape[1] != a.shape[0]:
        raise DimensionError("scale_channels", f"map {m.shape} and weights {a.shape} disagree")
    return ScaleChannels.apply(m, a)


def concat(*xs: Tensor) -> Tensor:
    """Concatenate vectors."""
    if any(x.data.ndim != 1 for x in xs):
        raise DimensionError("concat", f"expected vectors, got {[x.shape for x in xs]}")
    return Concat.apply(*xs)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)
