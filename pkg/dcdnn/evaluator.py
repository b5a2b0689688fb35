"""
Mode decision and usage statistics

Each block picks between the 35 directional modes and the K DCDNN modes by
minimising SSE + lambda * bits under a fixed bit-cost model: a one-bit flag,
plus baseline_mode_bits for a directional mode or log2(K) bits for a DCDNN
mode.
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import RunConfig
from dcdnn.baseline import NUM_MODES, sample_baseline_sse
from dcdnn.dataset import Plane, SampleSet, TrainSample, build_groups, extract_group_samples, write_pgm
from dcdnn.errors import ConfigurationError, DataError, UsageError
from dcdnn.fcnet import BLOCK_SIZES, ModeBank, model_nbytes, parameter_count
from dcdnn.trainer import TrainHistory, sample_sse

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

BASELINE = "baseline"
DCDNN = "dcdnn"


def lambda_from_qp(qp: float) -> float:
    return 0.85 * 2.0 ** ((qp - 12) / 3.0)


@dataclass(frozen=True)
class CostModel:
    lam: float
    flag_bits: float = 1.0
    modes: int = 1
    baseline_mode_bits: float = 6.0

    def __post_init__(self):
        if self.lam < 0 or self.flag_bits < 0 or self.baseline_mode_bits < 0:
            raise ConfigurationError("lambda and bit costs must be >= 0")
        if self.modes < 1:
            raise ConfigurationError(f"need at least one DCDNN mode, got {self.modes}")

    @property
    def dcdnn_mode_bits(self) -> float:
        return math.log2(self.modes)

    @property
    def baseline_bits(self) -> float:
        return self.flag_bits + self.baseline_mode_bits

    @property
    def dcdnn_bits(self) -> float:
        return self.flag_bits + self.dcdnn_mode_bits

    @classmethod
    def from_config(cls, cfg: RunConfig, modes: int) -> "CostModel":
        lam = cfg.lambda_override if cfg.lambda_override is not None else lambda_from_qp(cfg.qp)
        return cls(lam, cfg.flag_bits, modes, cfg.baseline_mode_bits)


@dataclass(frozen=True)
class ModeDecision:
    image_id: int
    x: int
    y: int
    block_size: int
    kind: str  # BASELINE or DCDNN
    mode: int
    sse: float
    bits: float
    lam: float

    @property
    def cost(self) -> float:
        return self.sse + self.lam * self.bits

    @property
    def is_dcdnn(self) -> bool:
        return self.kind == DCDNN


# ============================================================
# DECISIONS
# ============================================================

def _choose(origin: Tuple[int, int, int, int], baseline: Tuple[int, float], dcdnn: Optional[Tuple[int, float]],
            cost_model: CostModel) -> ModeDecision:
    image_id, x, y, n = origin
    lam = cost_model.lam
    mode, sse = baseline
    decision = ModeDecision(image_id, x, y, n, BASELINE, mode, sse, cost_model.baseline_bits, lam)
    if dcdnn is not None:
        index, dsse = dcdnn
        candidate = ModeDecision(image_id, x, y, n, DCDNN, index, dsse, cost_model.dcdnn_bits, lam)
        if candidate.cost < decision.cost:
            decision = candidate
    return decision


def _dcdnn_sse(banks: Sequence[ModeBank], block_size: int, refs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """SSE matrix [samples, K]"""
    out = np.zeros((refs.shape[0], len(banks)))
    for k, bank in enumerate(banks):
        if block_size not in bank:
            raise ConfigurationError(f"DCDNN mode {k} has no network for {block_size}x{block_size} blocks")
        out[:, k] = sample_sse(bank[block_size], refs, targets)
    return out


def decide(sample: TrainSample, banks: Sequence[ModeBank], cost_model: CostModel) -> ModeDecision:
    """
    Cheapest of the 35 directional modes and the K DCDNN modes. Ties go to
    the baseline, then to the lowest mode index. With no banks the decision
    is baseline only.
    """
    baseline = sample_baseline_sse(sample)
    dcdnn = None
    if banks:
        sse = _dcdnn_sse(banks, sample.block_size, sample.ref_vector[None], sample.target[None])[0]
        index = int(np.argmin(sse))
        dcdnn = (index, float(sse[index]))
    return _choose(sample.origin, baseline, dcdnn, cost_model)


def decide_set(samples: SampleSet, banks: Sequence[ModeBank], cost_model: CostModel) -> List[ModeDecision]:
    """decide() for every sample of a SampleSet, DCDNN side batched"""
    dcdnn_sse = _dcdnn_sse(banks, samples.block_size, samples.refs, samples.targets) if banks else None
    decisions = []
    for i in range(len(samples)):
        sample = samples.sample(i)
        dcdnn = None
        if dcdnn_sse is not None:
            index = int(np.argmin(dcdnn_sse[i]))
            dcdnn = (index, float(dcdnn_sse[i, index]))
        decisions.append(_choose(sample.origin, sample_baseline_sse(sample), dcdnn, cost_model))
    return decisions


def evaluate_plane(plane: Plane, banks: Sequence[ModeBank], cfg: RunConfig, cost_model: CostModel,
                   image_id: int = 0) -> Tuple[List[ModeDecision], int, int]:
    """
    Decide every TU of the PU grid over the plane.

    Returns the decisions and the width/height of the region they tile
    (the plane cropped to whole PUs).
    """
    groups = build_groups(plane, cfg.pu_size, cfg.tiling, image_id, stride=cfg.stride)
    samples = [s for g in groups for s in extract_group_samples(plane, g, _ref_lines(banks, cfg), causal=cfg.causal)]
    if not samples:
        return [], 0, 0
    by_size: Dict[int, List[TrainSample]] = {}
    for s in samples:
        by_size.setdefault(s.block_size, []).append(s)
    cfg.require_block_sizes(by_size, f"tiling {cfg.tiling!r}")
    decisions = []
    for n in sorted(by_size):
        decisions.extend(decide_set(SampleSet.from_samples(by_size[n]), banks, cost_model))
    decisions.sort(key=lambda d: (d.image_id, d.y, d.x, d.block_size))
    step = cfg.stride or cfg.pu_size
    width = (plane.width - cfg.pu_size) // step * step + cfg.pu_size
    height = (plane.height - cfg.pu_size) // step * step + cfg.pu_size
    return decisions, width, height


def _ref_lines(banks: Sequence[ModeBank], cfg: RunConfig) -> int:
    for bank in banks:
        for net in bank.values():
            return net.ref_lines
    return cfg.ref_lines


def mse_improvement(sample: TrainSample, banks: Sequence[ModeBank]) -> Tuple[float, float]:
    """(best baseline SSE, best DCDNN SSE) for one block"""
    if not banks:
        raise UsageError("mse_improvement needs at least one DCDNN mode")
    _, baseline_sse = sample_baseline_sse(sample)
    sse = _dcdnn_sse(banks, sample.block_size, sample.ref_vector[None], sample.target[None])[0]
    return baseline_sse, float(sse.min())


# ============================================================
# STATISTICS
# ============================================================

def covered_area(decisions: Iterable[ModeDecision]) -> int:
    return int(sum(d.block_size * d.block_size for d in decisions))


def _check_area(decisions: Sequence[ModeDecision], width: int, height: int) -> int:
    area = width * height
    if area <= 0:
        raise UsageError(f"frame must have a positive area, got {width}x{height}")
    if covered_area(decisions) > area:
        raise DataError(f"decisions cover {covered_area(decisions)} pixels, more than the {width}x{height} frame")
    return area


def usage_rate(decisions: Sequence[ModeDecision], width: int, height: int) -> float:
    """Fraction of the frame area coded with a DCDNN mode"""
    area = _check_area(decisions, width, height)
    return sum(d.block_size * d.block_size for d in decisions if d.is_dcdnn) / area


def usage_by_size(decisions: Sequence[ModeDecision], width: int, height: int) -> Dict[int, float]:
    """Per block size share of the frame area coded with a DCDNN mode; sums to usage_rate"""
    area = _check_area(decisions, width, height)
    usage = {n: 0.0 for n in BLOCK_SIZES}
    for d in decisions:
        if d.is_dcdnn:
            usage[d.block_size] += d.block_size * d.block_size / area
    return usage


@dataclass
class ModeHistogram:
    baseline: np.ndarray  # counts for directional modes 0..34
    dcdnn: np.ndarray  # counts for DCDNN modes 0..K-1

    def total(self) -> int:
        return int(self.baseline.sum() + self.dcdnn.sum())


def mode_histogram(decisions: Sequence[ModeDecision], modes: int = 1) -> ModeHistogram:
    baseline = np.zeros(NUM_MODES, dtype=np.int64)
    top = max([modes] + [d.mode + 1 for d in decisions if d.is_dcdnn])
    dcdnn = np.zeros(top, dtype=np.int64)
    for d in decisions:
        if d.is_dcdnn:
            dcdnn[d.mode] += 1
        else:
            baseline[d.mode] += 1
    return ModeHistogram(baseline, dcdnn)


def render_mode_map(decisions: Sequence[ModeDecision], width: int, height: int, modes: int, path: str) -> Plane:
    """Black for directional blocks, one grey level per DCDNN mode (lighter = higher index)"""
    samples = np.zeros((height, width), dtype=np.uint8)
    for d in decisions:
        if d.is_dcdnn:
            level = int(round(255 * (d.mode + 1) / max(modes, 1)))
            samples[d.y:d.y + d.block_size, d.x:d.x + d.block_size] = level
    plane = Plane(width, height, samples)
    write_pgm(plane, path)
    return plane


# ============================================================
# REPORT FILES
# ============================================================

DECISION_FIELDS = ["image_id", "x", "y", "block_size", "kind", "mode", "sse", "bits", "lam"]


def write_decisions(decisions: Sequence[ModeDecision], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(DECISION_FIELDS + ["cost"])
        for d in decisions:
            writer.writerow([d.image_id, d.x, d.y, d.block_size, d.kind, d.mode,
                             f"{d.sse:.6g}", f"{d.bits:.6g}", f"{d.lam:.6g}", f"{d.cost:.6g}"])


def read_decisions(path: str) -> List[ModeDecision]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [ModeDecision(int(row["image_id"]), int(row["x"]), int(row["y"]), int(row["block_size"]),
                             row["kind"], int(row["mode"]), float(row["sse"]), float(row["bits"]),
                             float(row["lam"]))
                for row in reader]


def _write_rows(path: str, header: List[str], rows: Iterable[List]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def emit_report(history: Optional[TrainHistory], decisions: Sequence[ModeDecision], out_dir: str,
                modes: int = 1, frame: Optional[Tuple[int, int]] = None,
                banks: Optional[Sequence[ModeBank]] = None,
                baseline_only: Optional[Sequence[ModeDecision]] = None) -> Dict[str, str]:
    """
    Write the report tables and summary.json into out_dir; returns
    {table name: path}. `frame` defaults to the area the decisions cover.
    `baseline_only` adds the directional-mode histogram of a run without
    DCDNN modes for comparison.
    """
    os.makedirs(out_dir, exist_ok=True)
    history = history or TrainHistory()
    paths = {name: os.path.join(out_dir, f"{name}.csv") for name in
             ("loss_per_round", "retention", "usage_by_size", "mode_histogram", "model_sizes")}

    _write_rows(paths["loss_per_round"], ["modes", "round", "cluster", "groups", "mean_loss"],
                ([r.modes, r.round, r.cluster, r.groups, _fmt(r.mean_loss)] for r in history.rounds))
    _write_rows(paths["retention"], ["modes", "round", "cluster", "retention"],
                ([r.modes, r.round, r.cluster, _fmt(r.retention)] for r in history.rounds if r.retention is not None))

    width, height = frame if frame else (covered_area(decisions), 1)
    usage = usage_by_size(decisions, width, height) if decisions else {n: 0.0 for n in BLOCK_SIZES}
    size_rows = []
    for n in BLOCK_SIZES:
        total = sum(1 for d in decisions if d.block_size == n)
        chosen = sum(1 for d in decisions if d.block_size == n and d.is_dcdnn)
        if total:
            size_rows.append([n, chosen, total, _fmt(usage[n])])
    _write_rows(paths["usage_by_size"], ["block_size", "dcdnn_blocks", "total_blocks", "usage"], size_rows)

    histogram = mode_histogram(decisions, modes)
    compare = mode_histogram(baseline_only, modes) if baseline_only is not None else None
    hist_rows = []
    if decisions or baseline_only:
        hist_rows = [[BASELINE, m, int(histogram.baseline[m])] + ([int(compare.baseline[m])] if compare else [])
                     for m in range(NUM_MODES)]
        hist_rows += [[DCDNN, k, int(histogram.dcdnn[k])] + ([0] if compare else [])
                      for k in range(histogram.dcdnn.size)]
    _write_rows(paths["mode_histogram"], ["kind", "mode", "count"] + (["count_without_dcdnn"] if compare else []),
                hist_rows)

    size_table = []
    for n, net in sorted((banks[0] if banks else {}).items()):
        size_table.append([n, net.hidden_dim, net.depth, parameter_count(net), model_nbytes(net, "float64"),
                           model_nbytes(net, "float32"), len(banks), model_nbytes(net) * len(banks)])
    _write_rows(paths["model_sizes"], ["block_size", "hidden_dim", "depth", "parameters", "bytes_float64",
                                       "bytes_float32", "modes", "bank_bytes"], size_table)

    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "modes": modes,
        "decisions": len(decisions),
        "dcdnn_decisions": sum(1 for d in decisions if d.is_dcdnn),
        "frame": [width, height],
        "usage_rate": usage_rate(decisions, width, height) if decisions else 0.0,
        "histogram_total": histogram.total(),
        "total_sse": float(sum(d.sse for d in decisions)),
        "total_bits": float(sum(d.bits for d in decisions)),
        "final_total_loss": {str(t.modes): t.total_loss for t in history.totals},
        "events": list(history.events),
        "tables": {name: os.path.basename(p) for name, p in paths.items()},
    }
    paths["summary"] = os.path.join(out_dir, "summary.json")
    with open(paths["summary"], "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    logger.info("Report written to %s (%d decisions, usage %.4f)", out_dir, len(decisions), summary["usage_rate"])
    return paths
