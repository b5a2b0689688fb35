"""
Built-in numerical checks run by `main.py selftest`
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from dcdnn.fcnet import Network, backward, forward, init_network, squared_norm
from dcdnn.seeding import derive_seed, make_rng
from dcdnn.split import SplitConfig, split_network

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
GRADIENT_STEP = 1e-5
# floor for |a| + |n| in the relative error
GRADIENT_FLOOR = 1e-4
KINK_MARGIN = 1e-3
SPLIT_TOLERANCE = 1e-12


@dataclass
class SelfTestReport:
    gradient_errors: List[float] = field(default_factory=list)
    negative_fractions: List[float] = field(default_factory=list)
    split_errors: List[float] = field(default_factory=list)
    kappa_zero_identical: bool = True

    @property
    def gradients_ok(self) -> bool:
        return all(e <= GRADIENT_TOLERANCE for e in self.gradient_errors)

    @property
    def split_ok(self) -> bool:
        return self.kappa_zero_identical and all(e <= SPLIT_TOLERANCE for e in self.split_errors)

    @property
    def passed(self) -> bool:
        return self.gradients_ok and self.split_ok


# ============================================================
# GRADIENT CHECK
# ============================================================

def _loss(net: Network, x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    out, _ = forward(net, x)
    diff = out - y
    rows = diff.shape[0] if diff.ndim == 2 else 1
    return float(np.sum(diff * diff) / (2.0 * rows)) + 0.5 * gamma * squared_norm(net)


def random_test_network(seed: int, hidden_dim: int = 8, depth: int = 2) -> Network:
    """Small network (N=4, L=1) with non-trivial biases and slopes"""
    rng = make_rng(derive_seed(seed, 1))
    net = init_network(4, 1, hidden_dim, depth, seed, value_scale=1.0)
    for layer in net.layers:
        layer.bias = rng.normal(0.0, 0.5, layer.bias.shape)
        if layer.prelu_slopes is not None:
            layer.prelu_slopes = rng.uniform(0.05, 0.5, layer.prelu_slopes.shape)
    return net


def gradient_check(net: Network, x: np.ndarray, y: np.ndarray, gamma: float = 1e-3,
                   eps: float = GRADIENT_STEP) -> float:
    """
    Worst per-entry relative error |a - n| / max(|a| + |n|, GRADIENT_FLOOR)
    between backward() and central differences over every weight, bias and
    slope.
    """
    _, cache = forward(net, x)
    analytic = np.concatenate([g.ravel() for g in backward(net, cache, y, gamma).arrays()])

    numeric = []
    for param in net.parameters():
        flat = param.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = _loss(net, x, y, gamma)
            flat[i] = saved - eps
            down = _loss(net, x, y, gamma)
            flat[i] = saved
            numeric.append((up - down) / (2.0 * eps))
    numeric = np.array(numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), GRADIENT_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _hidden_preactivations(net: Network, x: np.ndarray) -> np.ndarray:
    _, cache = forward(net, x)
    hidden = [z for z, layer in zip(cache.pre, net.layers) if layer.prelu_slopes is not None]
    return np.concatenate([np.ravel(z) for z in hidden])


def negative_fraction(net: Network, x: np.ndarray) -> float:
    """Share of hidden pre-activations on the negative PReLU branch"""
    return float(np.mean(_hidden_preactivations(net, x) < 0))


def draw_check_inputs(net: Network, rng: np.random.Generator, rows: int) -> Tuple[np.ndarray, np.ndarray]:
    """Random (x, y) whose hidden pre-activations all stay KINK_MARGIN away from 0"""
    for _ in range(100):
        x = rng.normal(0.0, 1.0, (rows, net.input_dim))
        if np.min(np.abs(_hidden_preactivations(net, x))) >= KINK_MARGIN:
            break
    y = rng.normal(0.0, 1.0, (rows, net.output_dim))
    return x, y


# ============================================================
# SPLIT SYMMETRY
# ============================================================

def split_symmetry_error(parent: Network, cfg: SplitConfig) -> float:
    child_a, child_b = split_network(parent, cfg)
    worst = 0.0
    for p, a, b in zip(parent.parameters(), child_a.parameters(), child_b.parameters()):
        norm = max(float(np.linalg.norm(p)), 1e-300)
        worst = max(worst, float(np.linalg.norm((a + b) / 2.0 - p)) / norm)
    return worst


def kappa_zero_identical(parent: Network, seed: int) -> bool:
    child_a, child_b = split_network(parent, SplitConfig(0.0, seed, True, True))
    return all(a.tobytes() == p.tobytes() and b.tobytes() == p.tobytes()
               for p, a, b in zip(parent.parameters(), child_a.parameters(), child_b.parameters()))


# ============================================================
# ENTRY POINT
# ============================================================

def run_selftest(gradient_cases: int = 50, split_cases: int = 100, seed: int = 0) -> SelfTestReport:
    report = SelfTestReport()
    rng = make_rng(seed)

    for case in range(gradient_cases):
        net = random_test_network(derive_seed(seed, 0, case), hidden_dim=int(rng.integers(2, 17)),
                                  depth=int(rng.integers(1, 4)))
        x, y = draw_check_inputs(net, rng, int(rng.integers(1, 4)))
        rows = x.shape[0]
        if rows == 1 and case % 2 == 0:
            x, y = x[0], y[0]
        report.gradient_errors.append(gradient_check(net, x, y))
        report.negative_fractions.append(negative_fraction(net, x))

    for case in range(split_cases):
        parent = random_test_network(derive_seed(seed, 2, case))
        cfg = SplitConfig(float(rng.uniform(0.0, 1.0)), derive_seed(seed, 3, case),
                          bool(case % 2), bool(case % 3 == 0))
        report.split_errors.append(split_symmetry_error(parent, cfg))
        if case < 10:
            report.kappa_zero_identical &= kappa_zero_identical(parent, case)

    logger.info("Gradient check: worst relative error %.3g over %d networks",
                max(report.gradient_errors, default=0.0), gradient_cases)
    logger.info("Split symmetry: worst relative error %.3g over %d parents; kappa=0 identical: %s",
                max(report.split_errors, default=0.0), split_cases, report.kappa_zero_identical)
    return report
