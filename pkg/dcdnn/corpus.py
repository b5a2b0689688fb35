"""
Corpus extraction: images -> prediction groups -> filtered samples -> .dcds
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import RunConfig
from dcdnn.baseline import sample_baseline_sse
from dcdnn.dataset import (
    Plane,
    PredictionGroup,
    TrainSample,
    build_groups,
    complexity_keep_mask,
    extract_group_samples,
    load_plane,
    parse_tiling,
    write_dataset,
)
from dcdnn.errors import UsageError

logger = logging.getLogger(__name__)


@dataclass
class CorpusStats:
    images: int = 0
    groups_total: int = 0
    groups_kept: int = 0
    samples_per_size: Dict[int, int] = field(default_factory=dict)


def extract_image(plane: Plane, image_id: int, cfg: RunConfig, first_group_id: int = 0,
                  recon: Optional[Plane] = None) -> Tuple[List[PredictionGroup], List[List[TrainSample]]]:
    groups = build_groups(plane, cfg.pu_size, cfg.tiling, image_id, first_group_id, cfg.stride)
    samples = [extract_group_samples(plane, g, cfg.ref_lines, recon, cfg.causal) for g in groups]
    return groups, samples


def group_baseline_mse(members: Sequence[TrainSample]) -> float:
    """Best-mode baseline SSE summed over the group's TUs, per pixel"""
    sse = sum(sample_baseline_sse(s)[1] for s in members)
    pixels = sum(s.block_size * s.block_size for s in members)
    return sse / pixels


def build_corpus(planes: Sequence[Plane], cfg: RunConfig,
                 recons: Optional[Sequence[Plane]] = None) -> Tuple[Dict[int, List[TrainSample]], List[PredictionGroup], CorpusStats]:
    """
    Extract every image, apply the complexity filter per image (when
    cfg.filter is on) and bucket the kept samples by block size.
    """
    if recons is not None and len(recons) != len(planes):
        raise UsageError(f"{len(planes)} images but {len(recons)} reconstructed planes")
    tu_sizes = [size for _, _, size in parse_tiling(cfg.tiling, cfg.pu_size)]
    cfg.require_block_sizes(tu_sizes, f"tiling {cfg.tiling!r}")
    stats = CorpusStats(images=len(planes))
    by_size: Dict[int, List[TrainSample]] = {}
    kept_groups: List[PredictionGroup] = []
    next_group = 0

    for image_id, plane in enumerate(planes):
        recon = recons[image_id] if recons is not None else None
        groups, samples = extract_image(plane, image_id, cfg, next_group, recon)
        next_group += len(groups)
        stats.groups_total += len(groups)
        if not groups:
            continue

        if cfg.filter:
            mses = np.array([group_baseline_mse(members) for members in samples])
            keep = complexity_keep_mask(mses, np.full(len(groups), image_id))
        else:
            keep = np.ones(len(groups), dtype=bool)
        logger.info("Image %d: kept %d of %d groups", image_id, int(keep.sum()), len(groups))

        for group, members, k in zip(groups, samples, keep):
            if not k:
                continue
            kept_groups.append(group)
            for sample in members:
                by_size.setdefault(sample.block_size, []).append(sample)

    stats.groups_kept = len(kept_groups)
    stats.samples_per_size = {n: len(items) for n, items in sorted(by_size.items())}
    return by_size, kept_groups, stats


def load_planes(paths: Sequence[str]) -> List[Plane]:
    return [load_plane(p) for p in paths]


def write_corpus(by_size: Dict[int, List[TrainSample]], groups: Sequence[PredictionGroup], out_dir: str,
                 prefix: str = "dataset") -> List[str]:
    """One .dcds file per block size, each carrying the full group table"""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for n, samples in sorted(by_size.items()):
        path = os.path.join(out_dir, f"{prefix}_N{n}.dcds")
        write_dataset(samples, groups, path)
        paths.append(path)
    return paths
