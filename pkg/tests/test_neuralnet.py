import math
import struct

import numpy as np
import pytest

from tieredids import neuralnet as nn
from tieredids.dataset import generate_synthetic


def net(weights, biases, dtype=np.float64):
    return nn.NetworkParams([np.array(w, dtype=dtype) for w in weights],
                            [np.array(b, dtype=dtype) for b in biases])


def numeric_grads(p, x, target, step=1e-5):
    """Central finite differences of batch_loss over every parameter."""
    out = []
    for arr in p.weights + p.biases:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = nn.batch_loss(nn.forward(p, x).output, target)
            arr[idx] = orig - step
            down = nn.batch_loss(nn.forward(p, x).output, target)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def test_init_shapes_and_determinism():
    p = nn.init_params([2, 1], seed=0)
    assert p.weights[0].shape == (1, 2)
    np.testing.assert_array_equal(p.biases[0], [0.0])
    assert p.equals(nn.init_params([2, 1], seed=0))
    assert not p.equals(nn.init_params([2, 1], seed=1))


def test_init_glorot_bounds():
    p = nn.init_params([40, 35, 30], seed=3)
    for w in p.weights:
        n_out, n_in = w.shape
        assert np.abs(w).max() <= math.sqrt(6 / (n_in + n_out))


def test_parameter_count_of_default_autoencoder():
    p = nn.init_params([40, 35, 30, 25, 30, 35, 40], seed=0)
    assert sum(w.size for w in p.weights) == 6400
    assert sum(b.size for b in p.biases) == 195
    assert p.n_parameters == 6595


def test_init_errors():
    with pytest.raises(ValueError):
        nn.init_params([3, 0, 3], seed=0)
    with pytest.raises(ValueError):
        nn.init_params([3], seed=0)


def test_non_chaining_layers_rejected():
    with pytest.raises(ValueError):
        net([np.zeros((2, 3)), np.zeros((2, 3))], [np.zeros(2), np.zeros(2)])


def test_zero_network_outputs_zero():
    p = net([np.zeros((3, 4)), np.zeros((4, 3))], [np.zeros(3), np.zeros(4)])
    np.testing.assert_array_equal(nn.forward(p, [1.0, -2.0, 3.0, 4.0]).output, 0.0)


def test_identity_linear_layer():
    p = net([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -7.0, 2.25])
    np.testing.assert_array_equal(nn.forward(p, x).output, x)


def test_hand_computed_2_2_2_forward():
    w1, b1 = [[0.5, -1.0], [2.0, 0.25]], [0.1, -0.2]
    w2, b2 = [[1.5, -0.5], [0.3, 0.7]], [0.05, 0.0]
    x = [0.8, -0.4]
    p = net([w1, w2], [b1, b2])
    # oracle: scalar arithmetic, written out
    h = [math.tanh(w1[i][0] * x[0] + w1[i][1] * x[1] + b1[i]) for i in range(2)]
    y = [w2[i][0] * h[0] + w2[i][1] * h[1] + b2[i] for i in range(2)]
    fp = nn.forward(p, x)
    np.testing.assert_allclose(fp.activations[1], h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(fp.output, y, rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(nn.init_params([3, 2], 0), np.zeros(4))


def test_forward_is_pure():
    p = nn.init_params([10, 6, 10], seed=1)
    x = np.random.default_rng(0).normal(size=(5, 10))
    assert nn.forward(p, x).output.tobytes() == nn.forward(p, x).output.tobytes()


def test_dropout_rate_zero_is_noop():
    p = nn.init_params([10, 6, 4, 6, 10], seed=1)
    x = np.random.default_rng(0).normal(size=(5, 10))
    plain = nn.forward(p, x).output
    rated = nn.forward(p, x, dropout_rate=0.0, rng=np.random.default_rng(9)).output
    assert plain.tobytes() == rated.tobytes()


def test_dropout_only_in_training_mode_and_hidden_layers():
    p = nn.init_params([10, 50, 10], seed=1)
    x = np.ones((20, 10))
    fp = nn.forward(p, x, dropout_rate=0.5, rng=np.random.default_rng(0))
    hidden = fp.activations[1]
    assert (hidden == 0).mean() == pytest.approx(0.5, abs=0.05)
    kept = hidden != 0
    np.testing.assert_allclose(hidden[kept], 2 * fp.hidden[0][kept], rtol=1e-6)
    # no mask without an rng
    assert nn.forward(p, x, dropout_rate=0.5).masks == [None]


@pytest.mark.parametrize("x,xp,expected", [
    ([0.0, 0.0], [1.0, 1.0], 1.0),
    ([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], 1 / 3),
    ([2.0, -1.0], [2.0, -1.0], 0.0),
])
def test_mse_examples(x, xp, expected):
    assert nn.mse(x, xp) == expected
    assert nn.mse(xp, x) == expected


def test_mse_length_mismatch():
    with pytest.raises(ValueError):
        nn.mse([1.0, 2.0], [1.0])


def test_zero_loss_gives_zero_gradients():
    p = nn.init_params([4, 3, 4], seed=2, dtype=np.float64)
    fp = nn.forward(p, np.array([0.1, 0.2, -0.3, 0.4]))
    g = nn.backward(p, fp, fp.output.copy())
    assert all(not a.any() for a in g.weights + g.biases)


def test_single_linear_neuron_gradient():
    p = net([[[1.0]]], [[0.0]])
    g = nn.backward(p, nn.forward(p, [1.0]), [0.0])
    assert g.weights[0][0, 0] == 2.0


def test_backward_shape_mismatch():
    p = nn.init_params([4, 3, 4], seed=2)
    with pytest.raises(ValueError):
        nn.backward(p, nn.forward(p, np.zeros(4)), np.zeros(3))


def test_gradient_check_40_25_40():
    rng = np.random.default_rng(0)
    p = nn.init_params([40, 25, 40], seed=4, dtype=np.float64)
    p.biases = [rng.normal(scale=0.1, size=b.shape) for b in p.biases]
    x = rng.normal(size=40)
    target = rng.normal(size=40)
    analytic = nn.backward(p, nn.forward(p, x), target)
    numeric = numeric_grads(p, x, target)
    assert max_relative_error(analytic.weights + analytic.biases, numeric) < 1e-4


def test_gradient_check_with_dropout_mask():
    # with a fixed mask the loss is still a smooth function of the parameters
    rng = np.random.default_rng(5)
    p = nn.init_params([6, 5, 3, 5, 6], seed=5, dtype=np.float64)
    x = rng.normal(size=(4, 6))
    fp = nn.forward(p, x, dropout_rate=0.3, rng=np.random.default_rng(1))
    masks = fp.masks
    analytic = nn.backward(p, fp, x)

    def loss():
        a = x
        for i, (w, b) in enumerate(zip(p.weights, p.biases)):
            z = a @ w.T + b
            a = z if i == len(p.weights) - 1 else np.tanh(z) * masks[i]
        return nn.batch_loss(a, x)

    step = 1e-5
    numeric = []
    for arr in p.weights + p.biases:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss()
            arr[idx] = orig - step
            down = loss()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        numeric.append(g)
    assert max_relative_error(analytic.weights + analytic.biases, numeric) < 1e-4


def test_zero_gradient_adam_step_is_noop():
    p = nn.init_params([3, 2], seed=0)
    zero = nn.NetworkParams([np.zeros_like(w) for w in p.weights],
                            [np.zeros_like(b) for b in p.biases])
    q, state = nn.adam_step(p, zero, nn.AdamState.zeros_like(p), nn.TrainConfig())
    assert q.equals(p) and state.t == 1


@pytest.mark.parametrize("g", [1e-3, 0.7, -5.0, 1e3])
def test_adam_first_step_size_is_learning_rate(g):
    cfg = nn.TrainConfig(learning_rate=0.01)
    p = net([[[0.0]]], [[0.0]], dtype=np.float32)
    grads = net([[[g]]], [[0.0]], dtype=np.float32)
    q, _ = nn.adam_step(p, grads, nn.AdamState.zeros_like(p), cfg)
    # closed form: m_hat = g, v_hat = g^2, so the step is lr * |g| / (|g| + eps)
    step = float(q.weights[0][0, 0])
    assert abs(abs(step) - 0.01) < 1e-6
    assert math.copysign(1, step) == -math.copysign(1, g)


def test_adam_converges_on_scalar_quadratic():
    cfg = nn.TrainConfig(learning_rate=0.1)
    p = net([[[0.0]]], [[0.0]], dtype=np.float32)
    state = nn.AdamState.zeros_like(p)
    for _ in range(500):
        # loss (w - 3)^2
        grads = nn.NetworkParams([2 * (p.weights[0] - 3)], [np.zeros(1, np.float32)])
        p, state = nn.adam_step(p, grads, state, cfg)
    assert abs(float(p.weights[0][0, 0]) - 3.0) < 1e-3


def test_adam_does_not_mutate_inputs():
    p = nn.init_params([3, 2], seed=0)
    before = p.copy()
    grads = nn.init_params([3, 2], seed=1)
    state = nn.AdamState.zeros_like(p)
    nn.adam_step(p, grads, state, nn.TrainConfig())
    assert p.equals(before) and state.t == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        nn.TrainConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        nn.TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        nn.TrainConfig(epochs=0)


def test_fit_is_deterministic():
    x = generate_synthetic(60, 0, 8, seed=1).features
    p = nn.init_params([8, 6, 4, 6, 8], seed=0)
    cfg = nn.TrainConfig(epochs=5, batch_size=16, seed=3)
    a, ha = nn.fit(p, x, x, cfg)
    b, hb = nn.fit(p, x, x, cfg)
    assert a.equals(b) and ha == hb
    assert a.dtype == np.float32


def test_moving_average_training_loss_non_increasing():
    # the default architecture and hyper-parameters on a fixed 200-sample normal set
    x = generate_synthetic(200, 0, 40, seed=0).features
    p = nn.init_params([40, 35, 30, 25, 30, 35, 40], seed=0)
    _, history = nn.fit(p, x, x, nn.TrainConfig(seed=0))
    moving = np.convolve(history, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(moving) <= 0)
    assert history[-1] < history[0]


def test_serialization_layout():
    p = net([[[1.0, 2.0]]], [[0.5]], dtype=np.float32)
    blob = nn.serialize_params(p)
    expected = (b"TNNP" + struct.pack("<II", 1, 1) + struct.pack("<II", 2, 1)
                + struct.pack("<3f", 1.0, 2.0, 0.5))
    assert blob == expected


def test_serialization_round_trip():
    p = nn.init_params([40, 35, 30, 25, 30, 35, 40], seed=7)
    blob = nn.serialize_params(p)
    assert len(blob) == 12 + 8 * 6 + 4 * 6595
    assert nn.deserialize_params(blob).equals(p)


@pytest.mark.parametrize("mangle", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b + b"\0",
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
])
def test_deserialize_rejects_corruption(mangle):
    blob = nn.serialize_params(nn.init_params([3, 2], seed=0))
    with pytest.raises(ValueError):
        nn.deserialize_params(mangle(blob))
