"""
Labelled synthetic corpora

Each block sits in a flat neighbourhood (level c plus noise) and carries a
linear ramp of one of several families: horizontal/vertical, rising or
falling. The references say nothing about the family, so a single network
can only predict the average ramp while one network per family predicts
its blocks well; the family label is the ground truth for clustering.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from dcdnn.dataset import Plane, PredictionGroup, TrainSample, TrainingSet, extract_sample
from dcdnn.errors import ConfigurationError, UsageError
from dcdnn.seeding import make_rng

logger = logging.getLogger(__name__)

FAMILIES = ("h+", "v+", "h-", "v-")


@dataclass(eq=False)
class SyntheticCorpus:
    samples: List[TrainSample]
    groups: List[PredictionGroup]
    labels: np.ndarray  # family index per group, in group id order
    families: Sequence[str]

    def training_set(self) -> TrainingSet:
        return TrainingSet.from_samples(self.samples, self.groups)


def ramp_block(family: str, block_size: int, level: float, slope: float) -> np.ndarray:
    n = block_size
    ramp = slope * (np.arange(n) - (n - 1) / 2.0)
    sign = -1.0 if family.endswith("-") else 1.0
    if family.startswith("h"):
        return level + sign * np.tile(ramp, (n, 1))
    return level + sign * np.tile(ramp[:, None], (1, n))


def gradient_corpus(count: int, block_size: int = 4, ref_lines: int = 2, families: int = 2,
                    slope: float = 8.0, noise: float = 2.0, seed: int = 0) -> SyntheticCorpus:
    """
    `count` single-TU groups cycling through the first `families` of
    FAMILIES. Every block gets its own small plane with the block at
    (L, L), so references go through the regular extraction path.
    """
    if not 1 <= families <= len(FAMILIES):
        raise ConfigurationError(f"families must lie in [1, {len(FAMILIES)}], got {families}")
    if count < 1:
        raise UsageError("need at least one synthetic block")

    rng = make_rng(seed)
    n, l = block_size, ref_lines
    side = l + 2 * n
    samples, groups = [], []
    labels = np.arange(count) % families
    for i, label in enumerate(labels):
        level = rng.uniform(64, 192)
        pixels = level + rng.normal(0.0, noise, (side, side))
        pixels[l:l + n, l:l + n] = ramp_block(FAMILIES[label], n, level, slope) + rng.normal(0.0, noise, (n, n))
        plane = Plane(side, side, np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
        samples.append(extract_sample(plane, l, l, n, l, image_id=i, group_id=i))
        groups.append(PredictionGroup(i, i, l, l, n, [(0, 0, n)]))

    logger.debug("Generated %d synthetic %dx%d blocks over %d families", count, n, n, families)
    return SyntheticCorpus(samples, groups, labels, FAMILIES[:families])


def synthetic_plane(width: int, height: int, block_size: int = 8, families: int = 4,
                    slope: float = 4.0, noise: float = 2.0, seed: int = 0) -> Plane:
    """A picture tiled with random ramp blocks, for end-to-end runs"""
    rng = make_rng(seed)
    pixels = np.empty((height, width))
    for y in range(0, height, block_size):
        for x in range(0, width, block_size):
            family = FAMILIES[int(rng.integers(families))]
            block = ramp_block(family, block_size, rng.uniform(64, 192), slope)
            h, w = min(block_size, height - y), min(block_size, width - x)
            pixels[y:y + h, x:x + w] = block[:h, :w]
    pixels += rng.normal(0.0, noise, pixels.shape)
    return Plane(width, height, np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def cluster_purity(clusters: np.ndarray, labels: np.ndarray) -> float:
    """
    Share of items whose cluster maps to their label under the best
    one-to-one cluster/label matching.
    """
    clusters = np.asarray(clusters, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if clusters.shape != labels.shape:
        raise UsageError("clusters and labels must have the same length")
    if clusters.size == 0:
        return 1.0
    k = int(max(clusters.max(), labels.max())) + 1
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (clusters, labels), 1)
    if k <= 8:
        best = max(sum(table[c, perm[c]] for c in range(k)) for perm in itertools.permutations(range(k)))
    else:
        # greedy matching for large K
        best, used_rows, used_cols = 0, set(), set()
        for flat in np.argsort(table, axis=None)[::-1]:
            c, lab = divmod(int(flat), k)
            if c not in used_rows and lab not in used_cols:
                best += int(table[c, lab])
                used_rows.add(c)
                used_cols.add(lab)
    return float(best) / clusters.size
