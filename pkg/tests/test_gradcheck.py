import numpy as np
import pytest

from app.nn import gradient_check, miniature_config
from app.nn.gradcheck import relative_error
from app.nn.network import build_network


def test_miniature_network_passes():
    config = miniature_config()
    result = gradient_check(config, np.random.default_rng(0))
    assert result.loss_reproducible
    assert result.passed(1e-4), result.per_tensor
    trainable = build_network(config, np.random.default_rng(0)).trainable_names()
    assert sorted(result.per_tensor) == sorted(trainable)
    assert result.checked > 0


@pytest.mark.parametrize(
    "overrides",
    [
        {"tail_lstm": False, "fft_branch": False},
        {"tail_lstm": True, "fft_branch": False, "n_stages": 2, "base_filters": 2},
    ],
)
def test_variants_pass(overrides):
    result = gradient_check(miniature_config(**overrides), np.random.default_rng(1), entries_per_tensor=8)
    assert result.passed(1e-4), result.per_tensor


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
