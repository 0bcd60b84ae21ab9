"""Residual CNN with a stacked-LSTM or pooling tail, optionally with a second FFT branch.

Layout per branch::

    Head -> Stage 1 .. Stage N -> (concatenate branches on channels) -> Tail

Stage j runs three ResBlocks at width ``base_filters * j`` and then a ResBlockSub
that halves the time axis, so after N stages the length is the input length
floor-halved N times.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import InvalidConfig, NonFiniteTensor, ShapeMismatch, WrongInputLength
from .layers import BatchNorm1D, Conv1D, Dense, Dropout, GlobalAvgPool1D, Layer, LeakyReLU, SpatialDropout1D, softmax
from .lstm import LSTMStack
from .parameters import Parameters, ParameterShapes

logger = logging.getLogger(__name__)

MAX_STAGES = 8


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_stages: int = Field(2, ge=1, le=MAX_STAGES, description="Number of residual stages N")
    tail_lstm: bool = Field(True, description="Stacked LSTM tail; global average pooling when false")
    fft_branch: bool = Field(False, description="Add a power-spectrum branch concatenated on channels")
    fft_normalize: bool = Field(False, description="Scale each power spectrum to a maximum of one")
    leaky_slope: float = Field(0.3, ge=0)
    spatial_dropout_rate: float = Field(0.2, ge=0, lt=1)
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    kernel_size: int = Field(16, ge=1)
    base_filters: int = Field(64, ge=1)
    lstm_units: int = Field(128, ge=1)
    lstm_layers: int = Field(3, ge=1)
    hidden_dense: int = Field(256, ge=1)
    n_classes: int = Field(3, ge=2)
    input_length: int = Field(1500, ge=2, description="Samples per network input")
    bn_momentum: float = Field(0.99, gt=0, lt=1)
    bn_epsilon: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _check_length(self) -> "NetworkConfig":
        if self.input_length >> self.n_stages < 1:
            raise ValueError(f"input_length {self.input_length} cannot be halved {self.n_stages} times")
        return self

    @classmethod
    def create(cls, **fields) -> "NetworkConfig":
        """Validate fields, raising InvalidConfig instead of pydantic's ValidationError."""
        try:
            return cls(**fields)
        except ValidationError as e:
            raise InvalidConfig(f"Invalid network configuration: {e}") from e

    def stage_width(self, stage: int) -> int:
        return self.base_filters * stage

    @property
    def branch_channels(self) -> int:
        return self.stage_width(self.n_stages)

    @property
    def tail_channels(self) -> int:
        return self.branch_channels * (2 if self.fft_branch else 1)

    @property
    def tail_length(self) -> int:
        length = self.input_length
        for _ in range(self.n_stages):
            length //= 2
        return length


def tail_input_shape(config: NetworkConfig, batch_size: int = 1) -> Tuple[int, int, int]:
    return batch_size, config.tail_length, config.tail_channels


class Head(Layer):
    """conv -> BN -> LReLU -> conv -> BN -> LReLU -> spatial dropout -> conv, plus the second conv's output."""

    def __init__(self, params: Parameters, prefix: str, in_channels: int, config: NetworkConfig, rng):
        width, k = config.base_filters, config.kernel_size
        self.conv1 = Conv1D(params, f"{prefix}/conv1", in_channels, width, k, 1, rng)
        self.bn1 = BatchNorm1D(params, f"{prefix}/bn1", width, config.bn_momentum, config.bn_epsilon, rng)
        self.act1 = LeakyReLU(config.leaky_slope)
        self.conv2 = Conv1D(params, f"{prefix}/conv2", width, width, k, 1, rng)
        self.bn2 = BatchNorm1D(params, f"{prefix}/bn2", width, config.bn_momentum, config.bn_epsilon, rng)
        self.act2 = LeakyReLU(config.leaky_slope)
        self.drop = SpatialDropout1D(config.spatial_dropout_rate)
        self.conv3 = Conv1D(params, f"{prefix}/conv3", width, width, k, 1, rng)

    def forward(self, x, training, rng=None):
        x = self.act1.forward(self.bn1.forward(self.conv1.forward(x, training), training), training)
        skip = self.conv2.forward(x, training)
        x = self.act2.forward(self.bn2.forward(skip, training), training)
        x = self.conv3.forward(self.drop.forward(x, training, rng), training)
        return x + skip

    def backward(self, grad):
        d = self.drop.backward(self.conv3.backward(grad))
        d_skip = grad + self.bn2.backward(self.act2.backward(d))
        d = self.conv2.backward(d_skip)
        return self.conv1.backward(self.bn1.backward(self.act1.backward(d)))


class ResBlock(Layer):
    """Pre-activation residual block: (BN -> LReLU -> spatial dropout -> conv) twice, plus a shortcut.

    ``downsample`` makes the first conv stride 2 with a stride-2 kernel-1 conv shortcut
    (the "sub" block). A change of width without downsampling uses a kernel-1 projection.
    """

    def __init__(
        self,
        params: Parameters,
        prefix: str,
        in_channels: int,
        out_channels: int,
        config: NetworkConfig,
        rng,
        downsample: bool = False,
    ):
        stride = 2 if downsample else 1
        momentum, eps, k = config.bn_momentum, config.bn_epsilon, config.kernel_size
        self.main: List[Layer] = [
            BatchNorm1D(params, f"{prefix}/bn1", in_channels, momentum, eps, rng),
            LeakyReLU(config.leaky_slope),
            SpatialDropout1D(config.spatial_dropout_rate),
            Conv1D(params, f"{prefix}/conv1", in_channels, out_channels, k, stride, rng),
            BatchNorm1D(params, f"{prefix}/bn2", out_channels, momentum, eps, rng),
            LeakyReLU(config.leaky_slope),
            SpatialDropout1D(config.spatial_dropout_rate),
            Conv1D(params, f"{prefix}/conv2", out_channels, out_channels, k, 1, rng),
        ]
        if downsample:
            self.shortcut: Optional[Conv1D] = Conv1D(params, f"{prefix}/shortcut", in_channels, out_channels, 1, 2, rng)
        elif in_channels != out_channels:
            self.shortcut = Conv1D(params, f"{prefix}/projection", in_channels, out_channels, 1, 1, rng)
        else:
            self.shortcut = None

    def forward(self, x, training, rng=None):
        y = x
        for layer in self.main:
            y = layer.forward(y, training, rng)
        return y + (self.shortcut.forward(x, training) if self.shortcut else x)

    def backward(self, grad):
        d = grad
        for layer in reversed(self.main):
            d = layer.backward(d)
        return d + (self.shortcut.backward(grad) if self.shortcut else grad)


class Branch(Layer):
    """Head followed by N stages; input (B, L, 1), output (B, L >> N, base_filters * N)."""

    def __init__(self, params: Parameters, prefix: str, config: NetworkConfig, rng):
        self.layers: List[Layer] = [Head(params, f"{prefix}/head", 1, config, rng)]
        width = config.base_filters
        for stage in range(1, config.n_stages + 1):
            stage_width = config.stage_width(stage)
            for block in range(1, 4):
                name = f"{prefix}/stage_{stage}/resblock_{block}"
                self.layers.append(ResBlock(params, name, width, stage_width, config, rng))
                width = stage_width
            name = f"{prefix}/stage_{stage}/resblock_sub"
            self.layers.append(ResBlock(params, name, width, width, config, rng, downsample=True))

    def forward(self, x, training, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class Tail(Layer):
    """BN -> LReLU -> (LSTM stack | global average pooling) -> dropout -> dense -> LReLU -> dropout -> logits."""

    def __init__(self, params: Parameters, prefix: str, config: NetworkConfig, rng):
        channels = config.tail_channels
        self.bn = BatchNorm1D(params, f"{prefix}/bn", channels, config.bn_momentum, config.bn_epsilon, rng)
        self.act = LeakyReLU(config.leaky_slope)
        if config.tail_lstm:
            self.reduce: Layer = LSTMStack(params, prefix, channels, config.lstm_units, config.lstm_layers, rng)
            reduced = config.lstm_units
        else:
            self.reduce = GlobalAvgPool1D()
            reduced = channels
        self.drop1 = Dropout(config.dropout_rate)
        self.hidden = Dense(params, f"{prefix}/dense_hidden", reduced, config.hidden_dense, rng)
        self.act_hidden = LeakyReLU(config.leaky_slope)
        self.drop2 = Dropout(config.dropout_rate)
        self.out = Dense(params, f"{prefix}/dense_out", config.hidden_dense, config.n_classes, rng)

    def forward(self, x, training, rng=None):
        x = self.act.forward(self.bn.forward(x, training), training)
        x = self.drop1.forward(self.reduce.forward(x, training), training, rng)
        x = self.act_hidden.forward(self.hidden.forward(x, training), training)
        return self.out.forward(self.drop2.forward(x, training, rng), training)

    def backward(self, grad):
        d = self.hidden.backward(self.act_hidden.backward(self.drop2.backward(self.out.backward(grad))))
        d = self.reduce.backward(self.drop1.backward(d))
        return self.bn.backward(self.act.backward(d))


class Network:
    """The full classifier bound to a ``Parameters`` collection.

    With an ``rng`` the constructor initialises every tensor; without one it binds
    to tensors already in ``params`` (for example loaded from a checkpoint).
    """

    def __init__(
        self,
        config: NetworkConfig,
        params: Parameters,
        rng: Optional[np.random.Generator] = None,
        check_finite: bool = False,
    ):
        self.config = config
        self.params = params
        self.check_finite = check_finite
        self.egm = Branch(params, "egm", config, rng)
        self.fft = Branch(params, "fft", config, rng) if config.fft_branch else None
        self.tail = Tail(params, "tail", config, rng)
        self.last_tail_input_shape: Optional[Tuple[int, ...]] = None

    def _check_input(self, batch: Optional[np.ndarray], what: str) -> np.ndarray:
        if batch is None:
            raise ShapeMismatch(f"The network needs a {what} batch")
        batch = np.asarray(batch, dtype=self.params.dtype)
        if batch.ndim == 2:
            batch = batch[:, :, None]
        if batch.ndim != 3 or batch.shape[2] != 1:
            raise ShapeMismatch(f"{what} batch must be (B, L, 1), got {batch.shape}")
        if batch.shape[1] != self.config.input_length:
            raise WrongInputLength(f"{what} inputs must have {self.config.input_length} samples, got {batch.shape[1]}")
        return batch

    def _assert_finite(self, array: np.ndarray, stage: str) -> None:
        if self.check_finite and not np.all(np.isfinite(array)):
            raise NonFiniteTensor(f"Non-finite values after {stage}")

    def forward(
        self,
        egm: np.ndarray,
        fft: Optional[np.ndarray] = None,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """Logits (B, n_classes)."""
        features = self.egm.forward(self._check_input(egm, "EGM"), training, rng)
        self._split = features.shape[2]
        if self.fft is not None:
            spectral = self.fft.forward(self._check_input(fft, "FFT"), training, rng)
            features = np.concatenate((features, spectral), axis=2)
        self.last_tail_input_shape = features.shape
        self._assert_finite(features, "the convolutional branches")
        logits = self.tail.forward(features, training, rng)
        self._assert_finite(logits, "the tail")
        return logits

    def backward(self, grad_logits: np.ndarray) -> None:
        grad = self.tail.backward(grad_logits)
        self.egm.backward(grad[:, :, : self._split])
        if self.fft is not None:
            self.fft.backward(grad[:, :, self._split :])
        if self.check_finite:
            for name, g in self.params.grads.items():
                self._assert_finite(g, f"backward into {name}")

    def predict_proba(self, egm: np.ndarray, fft: Optional[np.ndarray] = None) -> np.ndarray:
        return softmax(self.forward(egm, fft, training=False))


def build_network(config: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> Parameters:
    """Initialise every tensor the configuration needs.

    Raises:
        InvalidConfig: if the configuration violates its invariants
    """
    config = _validated(config)
    params = Parameters(dtype)
    Network(config, params, rng)
    logger.debug("Built network with %d tensors, %d values", len(params), params.count())
    return params


def parameter_layout(config: NetworkConfig) -> ParameterShapes:
    """Key set, shapes and trainability for a configuration, without allocating weights."""
    layout = ParameterShapes()
    Network(_validated(config), layout, rng=None)
    return layout


def parameter_shapes(config: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
    return dict(parameter_layout(config).declared)


def _validated(config: NetworkConfig) -> NetworkConfig:
    try:
        return NetworkConfig.model_validate(config.model_dump())
    except ValidationError as e:
        raise InvalidConfig(f"Invalid network configuration: {e}") from e


def forward(
    params: Parameters,
    config: NetworkConfig,
    batch: np.ndarray,
    training: bool = False,
    fft_batch: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Class probabilities (B, n_classes) for a batch of (B, input_length, 1) inputs."""
    return softmax(Network(config, params).forward(batch, fft_batch, training, rng))
