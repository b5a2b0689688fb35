"""
Network split

Derives two children from one parent network by adding and subtracting the
same Gaussian noise tensor to each layer, the way a codebook centroid is
split into (c + e, c - e). The noise std of a layer is kappa times the RMS of
that layer's weights.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from dcdnn.errors import ConfigurationError, DataError, UsageError
from dcdnn.fcnet import LayerParams, ModeBank, Network
from dcdnn.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitConfig:
    kappa: float = 0.02
    seed: int = 0
    perturb_bias: bool = False
    perturb_slopes: bool = False

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ConfigurationError(f"kappa must be finite and >= 0, got {self.kappa}")


def noise_sigma(layer: LayerParams, kappa: float) -> float:
    if layer.weights.size == 0:
        raise UsageError("cannot size split noise for a layer without weights")
    rms = float(np.sqrt(np.mean(layer.weights * layer.weights)))
    return kappa * rms


def split_network(parent: Network, cfg: SplitConfig) -> Tuple[Network, Network]:
    """Return (parent + noise, parent - noise) with one noise draw per layer"""
    if not parent.all_finite():
        raise DataError("cannot split a network with non-finite parameters")

    rng = make_rng(cfg.seed)
    child_a = parent.copy()
    child_b = parent.copy()
    child_a.seed = child_b.seed = int(cfg.seed)

    for layer_a, layer_b, layer in zip(child_a.layers, child_b.layers, parent.layers):
        sigma = noise_sigma(layer, cfg.kappa)
        targets = [("weights", True), ("bias", cfg.perturb_bias),
                   ("prelu_slopes", cfg.perturb_slopes and layer.prelu_slopes is not None)]
        for name, enabled in targets:
            if not enabled:
                continue
            base = getattr(layer, name)
            # drawn even when sigma is 0 so the stream layout does not depend on kappa
            noise = rng.standard_normal(base.shape) * sigma
            if sigma == 0.0:
                continue
            setattr(layer_a, name, base + noise)
            setattr(layer_b, name, base - noise)

    return child_a, child_b


def split_bank(bank: Sequence[Network], cfg: SplitConfig) -> List[Network]:
    """Children of bank[i] land at 2i and 2i+1; network i uses seed cfg.seed + i"""
    if not bank:
        raise UsageError("split_bank needs at least one network")
    sizes = {net.block_size for net in bank}
    if len(sizes) != 1:
        raise UsageError(f"split_bank got mixed block sizes {sorted(sizes)}")

    doubled: List[Network] = []
    for index, parent in enumerate(bank):
        child_cfg = SplitConfig(cfg.kappa, cfg.seed + index, cfg.perturb_bias, cfg.perturb_slopes)
        doubled.extend(split_network(parent, child_cfg))
    logger.info("Split %d network(s) of size %dx%d into %d (kappa=%g)",
                len(bank), bank[0].block_size, bank[0].block_size, len(doubled), cfg.kappa)
    return doubled


def split_mode_banks(banks: Sequence[ModeBank], cfg: SplitConfig) -> List[ModeBank]:
    """Split every block size of a multi-size bank; mode k's children are 2k and 2k+1"""
    if not banks:
        raise UsageError("split_mode_banks needs at least one mode")
    sizes = sorted(banks[0])
    doubled: List[ModeBank] = [dict() for _ in range(2 * len(banks))]
    for size in sizes:
        size_cfg = SplitConfig(cfg.kappa, derive_seed(cfg.seed, size), cfg.perturb_bias, cfg.perturb_slopes)
        children = split_bank([bank[size] for bank in banks], size_cfg)
        for index, child in enumerate(children):
            doubled[index][size] = child
    return doubled
