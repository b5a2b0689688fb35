import numpy as np
import pytest

import dcdnn.selftest as selftest
from dcdnn.fcnet import backward
from dcdnn.selftest import (
    GRADIENT_TOLERANCE,
    KINK_MARGIN,
    SelfTestReport,
    draw_check_inputs,
    gradient_check,
    negative_fraction,
    random_test_network,
    run_selftest,
)


class TestGradientCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_networks(self, seed):
        net = random_test_network(seed, hidden_dim=6, depth=2)
        x, y = draw_check_inputs(net, np.random.default_rng(seed), 3)
        assert gradient_check(net, x, y) <= GRADIENT_TOLERANCE

    def test_single_vector(self):
        net = random_test_network(9, hidden_dim=4, depth=1)
        x, y = draw_check_inputs(net, np.random.default_rng(1), 1)
        assert gradient_check(net, x[0], y[0]) <= GRADIENT_TOLERANCE

    def test_both_prelu_branches_are_used(self):
        net = random_test_network(2)
        x, _ = draw_check_inputs(net, np.random.default_rng(0), 4)
        assert 0.0 < negative_fraction(net, x) < 1.0

    def test_inputs_keep_clear_of_the_kink(self):
        net = random_test_network(4, hidden_dim=8, depth=2)
        x, _ = draw_check_inputs(net, np.random.default_rng(3), 2)
        _, cache = selftest.forward(net, x)
        hidden = np.concatenate([np.ravel(z) for z in cache.pre[:-1]])
        assert np.min(np.abs(hidden)) >= KINK_MARGIN

    @pytest.mark.parametrize("layer", [0, 1])
    def test_corrupted_slope_gradient_fails(self, monkeypatch, layer):
        net = random_test_network(2, hidden_dim=8, depth=2)
        x, y = draw_check_inputs(net, np.random.default_rng(0), 4)

        def corrupted(net, cache, target, gamma):
            grads = backward(net, cache, target, gamma)
            slopes = grads.layers[layer].prelu_slopes
            k = int(np.argmax(np.abs(slopes)))
            slopes[k] = 2.0 * slopes[k] + np.copysign(1e-2, slopes[k])
            return grads

        monkeypatch.setattr(selftest, "backward", corrupted)
        assert gradient_check(net, x, y) > GRADIENT_TOLERANCE

    def test_corrupted_bias_gradient_fails(self, monkeypatch):
        net = random_test_network(5, hidden_dim=8, depth=2)
        x, y = draw_check_inputs(net, np.random.default_rng(5), 3)

        def corrupted(net, cache, target, gamma):
            grads = backward(net, cache, target, gamma)
            bias = grads.layers[0].bias
            bias[0] = 2.0 * bias[0] + np.copysign(1e-2, bias[0])
            return grads

        monkeypatch.setattr(selftest, "backward", corrupted)
        assert gradient_check(net, x, y) > GRADIENT_TOLERANCE


class TestRunSelftest:
    def test_small_run_passes(self):
        report = run_selftest(gradient_cases=4, split_cases=6, seed=2)
        assert report.passed
        assert len(report.gradient_errors) == 4 and len(report.split_errors) == 6

    def test_failure_is_reported(self):
        assert not SelfTestReport(gradient_errors=[1e-2]).passed
        assert not SelfTestReport(kappa_zero_identical=False).passed
        assert SelfTestReport().passed
