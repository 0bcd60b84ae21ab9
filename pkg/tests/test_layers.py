import math

import numpy as np
import pytest

from app.errors import InvalidLabel, ShapeMismatch
from app.nn import gradient_check, miniature_config
from app.nn.gradcheck import numeric_gradient, relative_error
from app.nn.layers import (
    BatchNorm1D,
    Conv1D,
    Dense,
    Dropout,
    GlobalAvgPool1D,
    SpatialDropout1D,
    leaky_relu,
    same_padding,
    softmax,
    softmax_cross_entropy,
)
from app.nn.lstm import LSTMStack
from app.nn.parameters import Parameters

TOLERANCE = 1e-4


def check_layer_gradients(layer, params, x, training=True):
    """Compare a layer's backward pass with central differences of ``sum(w * layer(x))``."""
    rng = np.random.default_rng(99)
    weights = rng.normal(size=layer.forward(x, training).shape)

    def loss():
        return float(np.sum(weights * layer.forward(x, training)))

    params.zero_grads()
    layer.forward(x, training)
    dx = layer.backward(weights)
    assert relative_error(dx, numeric_gradient(loss, x)).max() <= TOLERANCE
    for name in params.trainable_names():
        analytic = params.grads[name].copy()
        assert relative_error(analytic, numeric_gradient(loss, params[name])).max() <= TOLERANCE, name


def test_same_padding():
    assert same_padding(1500, 16, 1) == (1500, 7, 8)
    assert same_padding(375, 16, 2)[0] == 187
    assert same_padding(1500, 1, 2) == (750, 0, 0)


def test_conv_shapes():
    rng = np.random.default_rng(0)
    params = Parameters(np.float64)
    conv = Conv1D(params, "conv", 1, 64, 16, 1, rng)
    assert conv.forward(rng.normal(size=(2, 1500, 1)), training=False).shape == (2, 1500, 64)
    down = Conv1D(params, "down", 3, 5, 16, 2, rng)
    assert down.forward(rng.normal(size=(1, 375, 3)), training=False).shape == (1, 187, 5)
    with pytest.raises(ShapeMismatch):
        conv.forward(np.zeros((1, 10, 2)), training=False)
    with pytest.raises(ShapeMismatch):
        Conv1D(params, "bad", 1, 1, 3, 3, rng)


def test_identity_kernel():
    params = Parameters(np.float64)
    conv = Conv1D(params, "conv", 1, 1, 1, 1, np.random.default_rng(0))
    params["conv/kernel"] = np.ones((1, 1, 1))
    x = np.arange(6.0).reshape(1, 6, 1)
    assert np.array_equal(conv.forward(x, training=False), x)


@pytest.mark.parametrize("kernel_size, stride, length", [(3, 1, 9), (4, 1, 8), (3, 2, 9), (4, 2, 10), (1, 2, 7)])
def test_conv_gradients(kernel_size, stride, length):
    rng = np.random.default_rng(1)
    params = Parameters(np.float64)
    conv = Conv1D(params, "conv", 2, 3, kernel_size, stride, rng)
    check_layer_gradients(conv, params, rng.normal(size=(2, length, 2)))


def test_batchnorm_examples():
    params = Parameters(np.float64)
    bn = BatchNorm1D(params, "bn", 2, rng=np.random.default_rng(0))
    constant = np.ones((3, 4, 2)) * np.array([2.0, -5.0])
    assert np.allclose(bn.forward(constant, training=True), 0.0)
    params["bn/gamma"] = np.zeros(2)
    params["bn/beta"] = np.array([0.5, -1.5])
    out = bn.forward(np.random.default_rng(1).normal(size=(3, 4, 2)), training=True)
    assert np.array_equal(out, np.broadcast_to([0.5, -1.5], out.shape))


def test_batchnorm_moving_statistics():
    params = Parameters(np.float64)
    bn = BatchNorm1D(params, "bn", 1, rng=np.random.default_rng(0))
    bn.forward(np.full((2, 5, 1), 4.0), training=True)
    assert params["bn/moving_mean"][0] == pytest.approx(0.04)
    assert params["bn/moving_variance"][0] == pytest.approx(0.99)
    assert "bn/moving_mean" not in params.trainable_names()


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(training):
    rng = np.random.default_rng(2)
    params = Parameters(np.float64)
    bn = BatchNorm1D(params, "bn", 3, rng=rng)
    params["bn/gamma"] = rng.uniform(0.5, 1.5, size=3)
    params["bn/beta"] = rng.normal(size=3)
    params["bn/moving_mean"] = rng.normal(size=3)
    params["bn/moving_variance"] = rng.uniform(0.5, 2.0, size=3)
    check_layer_gradients(bn, params, rng.normal(size=(2, 5, 3)), training)


def test_pointwise_layers():
    assert leaky_relu(-2.0) == pytest.approx(-0.6)
    assert leaky_relu(5.0) == 5.0
    pooled = GlobalAvgPool1D().forward(np.array([[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]]), training=False)
    assert pooled.tolist() == [[4.0, 5.0]]
    x = np.random.default_rng(0).normal(size=(2, 5, 3))
    for layer in (Dropout(0.0), SpatialDropout1D(0.0)):
        assert layer.forward(x, training=True, rng=np.random.default_rng(0)) is x
    assert Dropout(0.5).forward(x, training=False) is x


def test_dropout_scaling():
    x = np.ones((4, 50, 6))
    out = Dropout(0.2).forward(x, training=True, rng=np.random.default_rng(3))
    assert set(np.unique(out)) <= {0.0, 1.25}
    spatial = SpatialDropout1D(0.5).forward(x, training=True, rng=np.random.default_rng(3))
    # whole channels are kept or dropped together
    assert np.all(spatial == spatial[:, :1, :])
    assert set(np.unique(spatial)) <= {0.0, 2.0}
    with pytest.raises(ShapeMismatch):
        Dropout(1.0)


def test_dense_and_pool_gradients():
    rng = np.random.default_rng(4)
    params = Parameters(np.float64)
    dense = Dense(params, "dense", 4, 3, rng)
    check_layer_gradients(dense, params, rng.normal(size=(5, 4)))
    pool = GlobalAvgPool1D()
    x = rng.normal(size=(2, 6, 3))
    weights = rng.normal(size=(2, 3))
    pool.forward(x, training=False)
    numeric = numeric_gradient(lambda: float(np.sum(weights * pool.forward(x, training=False))), x)
    assert relative_error(pool.backward(weights), numeric).max() <= TOLERANCE


def test_lstm_zero_weights_give_zero_output():
    params = Parameters(np.float64)
    stack = LSTMStack(params, "tail", 3, 4, 2, np.random.default_rng(0))
    for name in params:
        params[name] = np.zeros(params[name].shape)
    out = stack.forward(np.random.default_rng(1).normal(size=(2, 7, 3)))
    assert out.shape == (2, 4)
    assert not out.any()


def test_lstm_output_shape():
    params = Parameters(np.float32)
    stack = LSTMStack(params, "tail", 5, 128, 3, np.random.default_rng(0))
    assert stack.forward(np.zeros((2, 11, 5), dtype=np.float32)).shape == (2, 128)
    with pytest.raises(ShapeMismatch):
        stack.forward(np.zeros((2, 11, 4), dtype=np.float32))


def test_lstm_gradients():
    rng = np.random.default_rng(5)
    params = Parameters(np.float64)
    stack = LSTMStack(params, "tail", 3, 4, 2, rng)
    check_layer_gradients(stack, params, rng.normal(size=(2, 5, 3)))


def test_softmax_cross_entropy_examples():
    loss, grad = softmax_cross_entropy(np.zeros((1, 3)), [2])
    assert loss == pytest.approx(math.log(3))
    np.testing.assert_allclose(softmax(np.zeros((1, 3))), [[1 / 3, 1 / 3, 1 / 3]])
    np.testing.assert_allclose(grad, [[1 / 3, 1 / 3, -2 / 3]])
    assert softmax_cross_entropy(np.array([[30.0, 0.0, 0.0]]), [0])[0] < 1e-9
    with pytest.raises(InvalidLabel):
        softmax_cross_entropy(np.zeros((1, 3)), [3])
    with pytest.raises(InvalidLabel):
        softmax_cross_entropy(np.zeros((2, 3)), [0])


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(4, 3))
    labels = [0, 2, 1, 2]
    _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert relative_error(grad, numeric).max() <= TOLERANCE


def test_sign_flipped_conv_backward_is_caught(monkeypatch):
    original = Conv1D.backward

    def flipped(self, grad):
        return -original(self, grad)

    monkeypatch.setattr(Conv1D, "backward", flipped)
    result = gradient_check(miniature_config(), np.random.default_rng(0), entries_per_tensor=5)
    assert result.max_relative_error > 1e-1
    assert not result.passed()
