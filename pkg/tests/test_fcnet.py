import struct

import numpy as np
import pytest

from dcdnn.errors import ConfigurationError, DataError, FormatError, ShapeError, TrainingAborted, UsageError
from dcdnn.fcnet import (
    Gradients,
    LayerParams,
    Network,
    OptimizerState,
    backward,
    batch_loss,
    data_loss,
    forward,
    init_network,
    load_bank,
    load_model,
    model_nbytes,
    parameter_count,
    predict_block,
    prelu,
    save_bank,
    save_model,
    sgd_step,
    squared_norm,
)
from dcdnn.selftest import gradient_check, random_test_network
from tests.helpers import make_sample, random_samples


def zero_network(block_size=4, ref_lines=1, hidden=8, depth=2):
    net = init_network(block_size, ref_lines, hidden, depth, seed=0, value_scale=1.0)
    for layer in net.layers:
        layer.weights[:] = 0.0
    return net


class TestInit:
    def test_bias_zero_and_slopes_quarter(self):
        net = init_network(4, 8, 128, 4, seed=7)
        np.testing.assert_array_equal(net.layers[0].bias, np.zeros(128))
        np.testing.assert_array_equal(net.layers[0].prelu_slopes, np.full(128, 0.25))

    def test_same_seed_is_bit_identical(self):
        assert init_network(4, 8, 128, 4, seed=7) == init_network(4, 8, 128, 4, seed=7)
        assert not init_network(4, 8, 128, 4, seed=7) == init_network(4, 8, 128, 4, seed=8)

    def test_dimensions_chain(self):
        net = init_network(8, 8, 256, 4, seed=1)
        assert net.layers[0].weights.shape == (256, 4 * 8 * 8 + 64)
        assert net.layers[-1].weights.shape == (64, 256)
        assert net.layers[-1].prelu_slopes is None
        assert all(layer.prelu_slopes is not None for layer in net.layers[:-1])

    def test_parameter_count_closed_form(self):
        net = init_network(4, 8, 128, 4, seed=0)
        first = 192 * 128 + 128 + 128
        hidden = 3 * (128 * 128 + 128 + 128)
        final = 128 * 16 + 16
        assert parameter_count(net) == first + hidden + final == 76816
        assert model_nbytes(net, "float32") < model_nbytes(net, "float64")

    @pytest.mark.parametrize("args", [(5, 8, 128, 4), (4, 0, 128, 4), (4, 8, 0, 4), (4, 8, 128, 0)])
    def test_invalid_dimensions(self, args):
        with pytest.raises(ConfigurationError):
            init_network(*args, seed=0)

    def test_unit_init_uses_unit_std(self):
        net = init_network(32, 8, 512, 4, seed=2, unit_init=True)
        assert abs(float(np.std(net.layers[0].weights)) - 1.0) < 0.02


class TestPrelu:
    def test_branches(self):
        np.testing.assert_array_equal(prelu(np.array([3.0]), np.array([0.25])), [3.0])
        np.testing.assert_array_equal(prelu(np.array([-2.0]), np.array([0.25])), [-0.5])
        np.testing.assert_array_equal(prelu(np.array([0.0]), np.array([0.9])), [0.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            prelu(np.zeros(3), np.zeros(2))


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        net = zero_network()
        out, _ = forward(net, np.random.default_rng(0).normal(size=net.input_dim))
        np.testing.assert_array_equal(out, np.zeros(16))

    def test_identity_like_single_layer(self):
        weights = np.eye(16, 17)
        net = Network(4, 1, 0, 16, [LayerParams(weights, np.zeros(16), None)], value_scale=1.0)
        x = np.arange(17, dtype=np.float64)
        out, _ = forward(net, x)
        np.testing.assert_array_equal(out, x[:16])

    def test_matches_straight_line_oracle(self):
        net = random_test_network(11, hidden_dim=6, depth=2)
        x = np.random.default_rng(42).normal(size=net.input_dim)
        h = x
        for layer in net.layers[:-1]:
            z = layer.weights @ h + layer.bias
            h = np.array([zi if zi >= 0 else ai * zi for zi, ai in zip(z, layer.prelu_slopes)])
        expected = net.layers[-1].weights @ h + net.layers[-1].bias
        out, _ = forward(net, x)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_batch_rows_match_single_vectors(self):
        net = random_test_network(5)
        x = np.random.default_rng(1).normal(size=(4, net.input_dim))
        batch, _ = forward(net, x)
        for i in range(4):
            np.testing.assert_allclose(batch[i], forward(net, x[i])[0], rtol=1e-12)

    def test_input_errors(self):
        net = random_test_network(0)
        with pytest.raises(ShapeError):
            forward(net, np.zeros(net.input_dim + 1))
        bad = np.zeros(net.input_dim)
        bad[3] = np.nan
        with pytest.raises(DataError):
            forward(net, bad)

    def test_predict_block_undoes_value_scale(self):
        net = random_test_network(3)
        net.value_scale = 0.5
        x = np.random.default_rng(2).normal(size=net.input_dim)
        np.testing.assert_allclose(predict_block(net, x), forward(net, x * 0.5)[0] / 0.5)


class TestLoss:
    def test_direct_substitution(self):
        net = zero_network()
        sample = make_sample(np.ones(net.input_dim), np.full(16, 2.0))
        assert batch_loss(net, [sample], gamma=0.0) == pytest.approx(32.0)

    def test_perfect_predictor_leaves_regulariser(self):
        net = random_test_network(4)
        net.value_scale = 1.0
        x = np.random.default_rng(3).normal(size=net.input_dim)
        y = forward(net, x)[0]
        assert batch_loss(net, [make_sample(x, y)], 0.01) == pytest.approx(0.005 * squared_norm(net))

    def test_brute_force_sum_and_decomposition(self):
        rng = np.random.default_rng(42)
        net = random_test_network(9)
        samples = random_samples(rng, 5, scale=1.0)
        explicit = sum(np.sum((forward(net, s.ref_vector)[0] - s.target) ** 2) for s in samples) / (2 * 5)
        gamma = 1e-3
        expected = explicit + 0.5 * gamma * squared_norm(net)
        assert batch_loss(net, samples, gamma) == pytest.approx(expected, rel=1e-10)
        singles = np.mean([batch_loss(net, [s], 0.0) for s in samples])
        assert batch_loss(net, samples, gamma) == pytest.approx(singles + 0.5 * gamma * squared_norm(net), rel=1e-10)

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            batch_loss(random_test_network(0), [], 0.0)

    def test_mismatched_sample(self):
        net = random_test_network(0)
        sample = make_sample(np.zeros(33), np.zeros(64), block_size=8)
        with pytest.raises(UsageError):
            batch_loss(net, [sample], 0.0)

    def test_data_loss_scales_targets(self):
        net = zero_network()
        net.value_scale = 0.5
        assert data_loss(net, np.zeros((1, net.input_dim)), np.full((1, 16), 2.0)) == pytest.approx(8.0)


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = random_test_network(seed)
        x = rng.normal(size=(3, net.input_dim))
        y = rng.normal(size=(3, net.output_dim))
        assert gradient_check(net, x, y, gamma=1e-3) <= 1e-4

    def test_zero_residual_zero_gradients(self):
        net = random_test_network(1)
        x = np.random.default_rng(0).normal(size=net.input_dim)
        out, cache = forward(net, x)
        for arr in backward(net, cache, out, 0.0).arrays():
            np.testing.assert_array_equal(arr, np.zeros_like(arr))

    def test_slope_gradient_zero_when_all_positive(self):
        net = init_network(4, 1, 8, 2, seed=0, value_scale=1.0)
        for layer in net.layers:
            layer.weights = np.abs(layer.weights)
        x = np.abs(np.random.default_rng(0).normal(size=net.input_dim)) + 0.1
        _, cache = forward(net, x)
        grads = backward(net, cache, np.zeros(16), 0.0)
        for layer in grads.layers[:-1]:
            np.testing.assert_array_equal(layer.prelu_slopes, 0.0)

    def test_stale_cache(self):
        net = random_test_network(0, hidden_dim=8)
        other = random_test_network(0, hidden_dim=5)
        _, cache = forward(other, np.zeros(other.input_dim))
        with pytest.raises(UsageError):
            backward(net, cache, np.zeros(16), 0.0)


def constant_grads(net, value):
    return Gradients([LayerParams(np.full_like(l.weights, value), np.full_like(l.bias, value),
                                  None if l.prelu_slopes is None else np.full_like(l.prelu_slopes, value))
                      for l in net.layers])


class TestSgdStep:
    def test_plain_sgd_without_momentum(self):
        net = random_test_network(0)
        before = net.copy()
        sgd_step(net, constant_grads(net, 2.0), OptimizerState.for_network(net, momentum=0.0), lr=0.1)
        for a, b in zip(net.parameters(), before.parameters()):
            np.testing.assert_allclose(a, b - 0.2, rtol=0, atol=1e-12)

    def test_two_momentum_steps(self):
        net = random_test_network(0)
        before = net.copy()
        state = OptimizerState.for_network(net, momentum=0.9)
        grads = constant_grads(net, 1.0)
        sgd_step(net, grads, state, lr=0.01)
        sgd_step(net, grads, state, lr=0.01)
        for a, b in zip(net.parameters(), before.parameters()):
            np.testing.assert_allclose(b - a, 0.01 * (1 + 1.9), rtol=1e-9)

    def test_zero_lr_leaves_parameters(self):
        net = random_test_network(0)
        before = net.copy()
        sgd_step(net, constant_grads(net, 3.0), OptimizerState.for_network(net), lr=0.0)
        assert net == before

    def test_negative_lr(self):
        net = random_test_network(0)
        with pytest.raises(UsageError):
            sgd_step(net, constant_grads(net, 1.0), OptimizerState.for_network(net), lr=-1.0)

    def test_non_finite_gradient_aborts(self):
        net = random_test_network(0)
        grads = constant_grads(net, 1.0)
        grads.layers[1].bias[0] = np.inf
        with pytest.raises(TrainingAborted, match="layer 1 bias"):
            sgd_step(net, grads, OptimizerState.for_network(net), lr=0.1)


class TestModelFiles:
    def test_round_trip_bit_exact(self):
        net = init_network(8, 2, 32, 3, seed=99)
        assert load_model(save_model(net)) == net

    def test_float32_storage(self):
        net = init_network(4, 2, 16, 2, seed=5)
        net.store_dtype = "float32"
        loaded = load_model(save_model(net))
        assert loaded.store_dtype == "float32"
        np.testing.assert_allclose(loaded.layers[0].weights, net.layers[0].weights, rtol=1e-6)

    def test_corrupt_magic(self):
        blob = bytearray(save_model(init_network(4, 1, 4, 1, seed=0)))
        blob[:4] = b"XXXX"
        with pytest.raises(FormatError, match="magic"):
            load_model(bytes(blob))

    def test_version_bump_rejected(self):
        blob = bytearray(save_model(init_network(4, 1, 4, 1, seed=0)))
        struct.pack_into("<I", blob, 4, 2)
        with pytest.raises(FormatError, match="version 2"):
            load_model(bytes(blob))

    def test_truncated(self):
        blob = save_model(init_network(4, 1, 4, 1, seed=0))
        with pytest.raises(FormatError):
            load_model(blob[:-3])
        with pytest.raises(FormatError):
            load_model(blob + b"\0")

    def test_bank_keeps_order(self):
        banks = [{4: init_network(4, 1, 4, 1, seed=k), 8: init_network(8, 1, 4, 1, seed=10 + k)} for k in range(2)]
        loaded = load_bank(save_bank(banks))
        assert len(loaded) == 2
        assert all(loaded[k][n] == banks[k][n] for k in range(2) for n in (4, 8))

    def test_bank_rejects_uneven_sizes(self):
        banks = [{4: init_network(4, 1, 4, 1, seed=0)}, {8: init_network(8, 1, 4, 1, seed=0)}]
        with pytest.raises(UsageError):
            save_bank(banks)
