"""Stacked LSTM with backpropagation through time.

Gate layout in every kernel is (input, forget, cell candidate, output):

    i = sigmoid(x W_i + h U_i + b_i)      f = sigmoid(x W_f + h U_f + b_f)
    g = tanh(x W_g + h U_g + b_g)         o = sigmoid(x W_o + h U_o + b_o)
    c_t = f * c_{t-1} + i * g             h_t = o * tanh(c_t)

Initial hidden and cell states are zero. Each layer reads the full hidden
sequence of the layer below; the stack returns the last hidden state of the
top layer.
"""

from typing import List, Optional

import numpy as np

from ..errors import ShapeMismatch
from .layers import Layer
from .parameters import Parameters, uniform


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_bias(units: int, forget_bias: float):
    def init(rng, shape):
        bias = np.zeros(shape)
        bias[units : 2 * units] = forget_bias
        return bias

    return init


class LSTMLayer(Layer):
    def __init__(
        self,
        params: Parameters,
        name: str,
        input_dim: int,
        units: int,
        rng: Optional[np.random.Generator],
        forget_bias: float = 1.0,
    ):
        self.params = params
        self.name = name
        self.input_dim = input_dim
        self.units = units
        limit = 1.0 / np.sqrt(units)
        self.kernel = params.declare(f"{name}/kernel", (input_dim, 4 * units), uniform(limit), rng)
        self.recurrent_kernel = params.declare(f"{name}/recurrent_kernel", (units, 4 * units), uniform(limit), rng)
        self.bias = params.declare(f"{name}/bias", (4 * units,), _lstm_bias(units, forget_bias), rng)

    def forward(self, x, training=False, rng=None):
        """(B, T, F) -> hidden sequence (B, T, H)."""
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeMismatch(f"{self.name}: expected (B, T, {self.input_dim}), got {x.shape}")
        batch, steps, _ = x.shape
        h_units = self.units
        recurrent = self.params[self.recurrent_kernel]
        projected = x @ self.params[self.kernel] + self.params[self.bias]

        h = np.zeros((batch, h_units), dtype=x.dtype)
        c = np.zeros((batch, h_units), dtype=x.dtype)
        hs = np.empty((batch, steps, h_units), dtype=x.dtype)
        gates = np.empty((batch, steps, 4 * h_units), dtype=x.dtype)
        cs = np.empty((batch, steps + 1, h_units), dtype=x.dtype)
        cs[:, 0] = c
        for t in range(steps):
            z = projected[:, t] + h @ recurrent
            i = sigmoid(z[:, :h_units])
            f = sigmoid(z[:, h_units : 2 * h_units])
            g = np.tanh(z[:, 2 * h_units : 3 * h_units])
            o = sigmoid(z[:, 3 * h_units :])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates[:, t] = np.concatenate((i, f, g, o), axis=1)
            cs[:, t + 1] = c
            hs[:, t] = h
        self._cache = (x, hs, gates, cs)
        return hs

    def backward(self, grad):
        """Gradient w.r.t. the hidden sequence (B, T, H) -> gradient w.r.t. the input (B, T, F)."""
        x, hs, gates, cs = self._cache
        batch, steps, _ = x.shape
        h_units = self.units
        recurrent = self.params[self.recurrent_kernel]

        dz_all = np.empty_like(gates)
        dh_next = np.zeros((batch, h_units), dtype=x.dtype)
        dc_next = np.zeros((batch, h_units), dtype=x.dtype)
        for t in reversed(range(steps)):
            i = gates[:, t, :h_units]
            f = gates[:, t, h_units : 2 * h_units]
            g = gates[:, t, 2 * h_units : 3 * h_units]
            o = gates[:, t, 3 * h_units :]
            c_prev = cs[:, t]
            tanh_c = np.tanh(cs[:, t + 1])

            dh = grad[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            dz_all[:, t, :h_units] = dc * g * i * (1.0 - i)
            dz_all[:, t, h_units : 2 * h_units] = dc * c_prev * f * (1.0 - f)
            dz_all[:, t, 2 * h_units : 3 * h_units] = dc * i * (1.0 - g**2)
            dz_all[:, t, 3 * h_units :] = dh * tanh_c * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz_all[:, t] @ recurrent.T

        h_prev = np.concatenate((np.zeros((batch, 1, h_units), dtype=x.dtype), hs[:, :-1]), axis=1)
        self.params.accumulate(self.kernel, np.tensordot(x, dz_all, axes=([0, 1], [0, 1])))
        self.params.accumulate(self.recurrent_kernel, np.tensordot(h_prev, dz_all, axes=([0, 1], [0, 1])))
        self.params.accumulate(self.bias, dz_all.sum(axis=(0, 1)))
        return dz_all @ self.params[self.kernel].T


class LSTMStack(Layer):
    def __init__(
        self,
        params: Parameters,
        prefix: str,
        input_dim: int,
        units: int,
        n_layers: int,
        rng: Optional[np.random.Generator],
    ):
        self.units = units
        self.layers: List[LSTMLayer] = []
        for index in range(n_layers):
            width = input_dim if index == 0 else units
            self.layers.append(LSTMLayer(params, f"{prefix}/lstm_{index}", width, units, rng))

    def forward(self, x, training=False, rng=None):
        """(B, T, F) -> last hidden state of the top layer (B, H)."""
        for layer in self.layers:
            x = layer.forward(x, training)
        self._steps = x.shape[1]
        return x[:, -1, :]

    def backward(self, grad):
        sequence_grad = np.zeros((grad.shape[0], self._steps, self.units), dtype=grad.dtype)
        sequence_grad[:, -1, :] = grad
        for layer in reversed(self.layers):
            sequence_grad = layer.backward(sequence_grad)
        return sequence_grad


def lstm_stack(params: Parameters, prefix: str, x: np.ndarray, units: int, n_layers: int) -> np.ndarray:
    """Eval-only convenience wrapper over already declared LSTM weights."""
    return LSTMStack(params, prefix, x.shape[2], units, n_layers, rng=None).forward(x)
