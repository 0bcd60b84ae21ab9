"""Finite-difference verification of the backward passes on a miniature network."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .layers import softmax_cross_entropy
from .network import Network, NetworkConfig, build_network

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# floor of the relative-error denominator, keeps vanishing gradients from dividing by zero
DENOMINATOR_FLOOR = 1e-5


def miniature_config(**overrides) -> NetworkConfig:
    """Small double-branch network: 32 samples, kernel 4, one stage, 4 LSTM units, no dropout."""
    fields = dict(
        n_stages=1,
        tail_lstm=True,
        fft_branch=True,
        kernel_size=4,
        base_filters=4,
        lstm_units=4,
        lstm_layers=2,
        hidden_dense=6,
        input_length=32,
        dropout_rate=0.0,
        spatial_dropout_rate=0.0,
    )
    fields.update(overrides)
    return NetworkConfig.create(**fields)


def relative_error(analytic, numeric, floor: float = DENOMINATOR_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denominator


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to every entry of ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f()
        flat[i] = original - h
        minus = f()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


@dataclass
class GradcheckResult:
    max_relative_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped_kinks: int = 0
    loss: float = 0.0
    loss_reproducible: bool = True

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.loss_reproducible and self.max_relative_error <= tolerance


def gradient_check(
    config: Optional[NetworkConfig] = None,
    rng: Optional[np.random.Generator] = None,
    entries_per_tensor: int = 20,
    h: float = DEFAULT_STEP,
    batch_size: int = 3,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradcheckResult:
    """
    Compare analytic gradients of the mean cross-entropy loss with central finite
    differences in float64, batch norm in train mode.

    Up to ``entries_per_tensor`` randomly chosen entries of every trainable tensor
    are perturbed by ``h``. An entry whose error exceeds ``tolerance`` is excluded
    when its two one-sided differences disagree by at least as much as the error,
    i.e. the perturbation crossed a LeakyReLU kink; excluded entries are counted.
    """
    config = config or miniature_config()
    rng = rng if rng is not None else np.random.default_rng(0)
    params = build_network(config, rng, dtype=np.float64)
    net = Network(config, params)

    egm = rng.normal(size=(batch_size, config.input_length, 1))
    fft = rng.normal(size=(batch_size, config.input_length, 1)) if config.fft_branch else None
    labels = rng.integers(0, config.n_classes, size=batch_size)

    def loss_fn() -> float:
        return softmax_cross_entropy(net.forward(egm, fft, training=True), labels)[0]

    params.zero_grads()
    logits = net.forward(egm, fft, training=True)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    net.backward(grad_logits)
    analytic = {name: g.copy() for name, g in params.grads.items()}
    base_loss = loss_fn()
    result = GradcheckResult(max_relative_error=0.0, loss=float(loss), loss_reproducible=base_loss == loss)
    if not result.loss_reproducible:
        logger.warning("Loss recomputation differs: %r != %r", base_loss, loss)

    for name in params.trainable_names():
        flat = params[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        worst = 0.0
        for i in picks:
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn()
            flat[i] = original - h
            minus = loss_fn()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            a = analytic[name].reshape(-1)[i]
            error = float(relative_error(a, numeric))
            if error > tolerance:
                one_sided_gap = abs((plus - base_loss) / h - (base_loss - minus) / h)
                if abs(a - numeric) <= one_sided_gap:
                    result.skipped_kinks += 1
                    logger.debug("%s[%d]: kink, skipped (error %.3g)", name, i, error)
                    continue
            result.checked += 1
            worst = max(worst, error)
        result.per_tensor[name] = worst
        result.max_relative_error = max(result.max_relative_error, worst)

    logger.info(
        "Gradient check: max relative error %.3g over %d entries (%d kinks skipped)",
        result.max_relative_error,
        result.checked,
        result.skipped_kinks,
    )
    return result
