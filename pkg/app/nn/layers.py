"""Layers with hand-written backward passes.

Activations are laid out (batch, time, channels). Each layer caches what its
backward pass needs during ``forward`` and adds parameter gradients into the
shared ``Parameters`` buffers during ``backward``.
"""

from typing import Optional, Tuple

import numpy as np

from ..errors import InvalidLabel, ShapeMismatch
from .parameters import Parameters, he_uniform, ones, zeros


class Layer:
    def forward(self, x: np.ndarray, training: bool, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def same_padding(length: int, kernel_size: int, stride: int) -> Tuple[int, int, int]:
    """Output length and (left, right) zero padding.

    Stride 1 keeps the length; stride 2 gives ``length // 2``. Odd totals put the
    extra zero on the right.
    """
    out_length = length if stride == 1 else length // stride
    total = max((out_length - 1) * stride + kernel_size - length, 0)
    left = total // 2
    return out_length, left, total - left


class Conv1D(Layer):
    def __init__(
        self,
        params: Parameters,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ):
        if stride not in (1, 2):
            raise ShapeMismatch(f"{name}: stride must be 1 or 2, got {stride}")
        self.params = params
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        fan_in = kernel_size * in_channels
        shape = (kernel_size, in_channels, out_channels)
        self.kernel = params.declare(f"{name}/kernel", shape, he_uniform(fan_in), rng)
        self.bias = params.declare(f"{name}/bias", (out_channels,), zeros, rng)

    def _taps(self, out_length: int):
        # input positions read by kernel tap k are k, k + stride, ..., for every output step
        span = self.stride * (out_length - 1) + 1
        return [slice(k, k + span, self.stride) for k in range(self.kernel_size)]

    def forward(self, x, training, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"{self.name}: expected (B, L, {self.in_channels}), got {x.shape}")
        length = x.shape[1]
        out_length, left, right = same_padding(length, self.kernel_size, self.stride)
        if out_length < 1:
            raise ShapeMismatch(f"{self.name}: input length {length} is too short for stride {self.stride}")
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        kernel = self.params[self.kernel]
        out = np.zeros((x.shape[0], out_length, self.out_channels), dtype=x.dtype)
        for k, taps in enumerate(self._taps(out_length)):
            out += xp[:, taps, :] @ kernel[k]
        out += self.params[self.bias]
        self._cache = (xp, length, left, out_length)
        return out

    def backward(self, grad):
        xp, length, left, out_length = self._cache
        kernel = self.params[self.kernel]
        dxp = np.zeros_like(xp)
        dkernel = np.empty_like(kernel)
        for k, taps in enumerate(self._taps(out_length)):
            dkernel[k] = np.tensordot(xp[:, taps, :], grad, axes=([0, 1], [0, 1]))
            dxp[:, taps, :] += grad @ kernel[k].T
        self.params.accumulate(self.kernel, dkernel)
        self.params.accumulate(self.bias, grad.sum(axis=(0, 1)))
        return dxp[:, left : left + length, :]


class BatchNorm1D(Layer):
    """Per-channel normalisation over batch and time; moving statistics are used in eval mode."""

    def __init__(
        self,
        params: Parameters,
        name: str,
        channels: int,
        momentum: float = 0.99,
        epsilon: float = 1e-3,
        rng: Optional[np.random.Generator] = None,
    ):
        self.params = params
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = params.declare(f"{name}/gamma", (channels,), ones, rng)
        self.beta = params.declare(f"{name}/beta", (channels,), zeros, rng)
        self.moving_mean = params.declare(f"{name}/moving_mean", (channels,), zeros, rng, trainable=False)
        self.moving_variance = params.declare(f"{name}/moving_variance", (channels,), ones, rng, trainable=False)

    def forward(self, x, training, rng=None):
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise ShapeMismatch(f"{self.name}: expected (B, L, {self.channels}), got {x.shape}")
        gamma = self.params[self.gamma]
        if training:
            mean = x.mean(axis=(0, 1))
            variance = x.var(axis=(0, 1))
            m = self.momentum
            self.params[self.moving_mean] = m * self.params[self.moving_mean] + (1 - m) * mean
            self.params[self.moving_variance] = m * self.params[self.moving_variance] + (1 - m) * variance
        else:
            mean = self.params[self.moving_mean]
            variance = self.params[self.moving_variance]
        inv_std = 1.0 / np.sqrt(variance + self.epsilon)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, training)
        return gamma * x_hat + self.params[self.beta]

    def backward(self, grad):
        x_hat, inv_std, training = self._cache
        gamma = self.params[self.gamma]
        self.params.accumulate(self.gamma, (grad * x_hat).sum(axis=(0, 1)))
        self.params.accumulate(self.beta, grad.sum(axis=(0, 1)))
        dx_hat = grad * gamma
        if not training:
            return dx_hat * inv_std
        n = grad.shape[0] * grad.shape[1]
        return (
            inv_std
            / n
            * (n * dx_hat - dx_hat.sum(axis=(0, 1)) - x_hat * (dx_hat * x_hat).sum(axis=(0, 1)))
        )


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.3):
        self.slope = slope

    def forward(self, x, training, rng=None):
        self._positive = x >= 0
        return np.where(self._positive, x, self.slope * x)

    def backward(self, grad):
        return np.where(self._positive, grad, self.slope * grad)


def leaky_relu(x: np.ndarray, slope: float = 0.3) -> np.ndarray:
    return LeakyReLU(slope).forward(np.asarray(x), training=False)


class Dropout(Layer):
    """Inverted dropout of single elements; identity in eval mode or at rate 0."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch(f"Dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def _mask_shape(self, shape):
        return shape

    def forward(self, x, training, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("Dropout in training mode needs an rng")
        keep = rng.random(self._mask_shape(x.shape)) >= self.rate
        self._mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class SpatialDropout1D(Dropout):
    """Drops whole channels: one mask value per (sample, channel), shared over time."""

    def _mask_shape(self, shape):
        if len(shape) != 3:
            raise ShapeMismatch(f"Spatial dropout expects (B, L, C), got {shape}")
        return shape[0], 1, shape[2]


class GlobalAvgPool1D(Layer):
    def forward(self, x, training, rng=None):
        if x.ndim != 3:
            raise ShapeMismatch(f"Global average pooling expects (B, L, C), got {x.shape}")
        self._length = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad):
        return np.repeat(grad[:, None, :] / self._length, self._length, axis=1)


class Dense(Layer):
    def __init__(
        self, params: Parameters, name: str, in_features: int, out_features: int, rng: Optional[np.random.Generator]
    ):
        self.params = params
        self.name = name
        self.in_features = in_features
        self.kernel = params.declare(f"{name}/kernel", (in_features, out_features), he_uniform(in_features), rng)
        self.bias = params.declare(f"{name}/bias", (out_features,), zeros, rng)

    def forward(self, x, training, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"{self.name}: expected (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params[self.kernel] + self.params[self.bias]

    def backward(self, grad):
        self.params.accumulate(self.kernel, self._x.T @ grad)
        self.params.accumulate(self.bias, grad.sum(axis=0))
        return grad @ self.params[self.kernel].T


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient ``(softmax - one_hot) / B``.

    Raises:
        InvalidLabel: if a label is outside ``0 .. n_classes - 1``
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    batch, n_classes = logits.shape
    if labels.shape != (batch,) or np.any(labels < 0) or np.any(labels >= n_classes):
        raise InvalidLabel(f"Labels must be {batch} integers in [0, {n_classes}), got {labels.tolist()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(batch), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch
