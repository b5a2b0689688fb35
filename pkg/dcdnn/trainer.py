"""
Data-clustering-driven recursive training

pretrain one bank -> split -> rounds of (partition groups by recovery
quality, train each cluster on its own groups) -> split again until the
requested number of modes is reached.
"""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import RunConfig
from dcdnn.dataset import TrainingSet
from dcdnn.errors import ConfigurationError, UsageError
from dcdnn.fcnet import ModeBank, OptimizerState, backward, forward, init_network, predict_block, sgd_step
from dcdnn.seeding import derive_seed, make_rng
from dcdnn.split import SplitConfig, split_mode_banks, split_network

logger = logging.getLogger(__name__)

# seed stream keys
_PRETRAIN_INIT = 0
_SPLIT = 1
_CLUSTER_TRAIN = 2
_RESPAWN = 3

_SSE_CHUNK = 4096


# ============================================================
# SCHEDULES
# ============================================================

@dataclass(frozen=True)
class Schedule:
    epochs: int
    lr_start: float
    lr_floor: float
    step: int

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.step < 1:
            raise ConfigurationError(f"step must be >= 1, got {self.step}")
        if not self.lr_start >= self.lr_floor > 0:
            raise ConfigurationError(
                f"need lr_start >= lr_floor > 0, got {self.lr_start} and {self.lr_floor}"
            )

    @property
    def stages(self) -> int:
        return max(1, math.ceil(self.epochs / self.step))


def pretrain_schedule(cfg: RunConfig) -> Schedule:
    return Schedule(cfg.pretrain_epochs, cfg.pretrain_lr_start, cfg.pretrain_lr_floor, cfg.pretrain_step)


def recursive_schedule(cfg: RunConfig) -> Schedule:
    return Schedule(cfg.recursive_epochs, cfg.recursive_lr_start, cfg.recursive_lr_floor, cfg.recursive_step)


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Piecewise-constant exponential decay; the last stage sits at lr_floor"""
    if not 0 <= epoch < schedule.epochs:
        raise UsageError(f"epoch {epoch} outside [0, {schedule.epochs})")
    stages = schedule.stages
    if stages == 1:
        return schedule.lr_start
    stage = epoch // schedule.step
    if stage == stages - 1:
        return schedule.lr_floor
    ratio = (schedule.lr_floor / schedule.lr_start) ** (1.0 / (stages - 1))
    return schedule.lr_start * ratio ** stage


# ============================================================
# ASSIGNMENTS AND HISTORY
# ============================================================

@dataclass(eq=False)
class Assignment:
    group_ids: np.ndarray  # group id per group position
    clusters: np.ndarray  # cluster index per group position
    round: int = 0

    def counts(self, modes: int) -> np.ndarray:
        return np.bincount(self.clusters, minlength=modes)


@dataclass
class RoundRecord:
    modes: int
    round: int
    cluster: int
    groups: int
    mean_loss: float
    retention: Optional[float]


@dataclass
class EpochRecord:
    modes: int
    round: int
    cluster: int
    block_size: int
    epoch: int
    lr: float
    mean_loss: float


@dataclass
class TotalRecord:
    modes: int
    round: int
    total_loss: float


@dataclass
class TrainHistory:
    """
    Round records carry per-pixel MSE in pixel units; epoch records carry
    the mean training loss in network units. Round 0 is the state right
    after pretraining (modes=1) or right after a split.
    """

    rounds: List[RoundRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)
    totals: List[TotalRecord] = field(default_factory=list)
    events: List[str] = field(default_factory=list)

    def round_numbers(self, modes: int) -> List[int]:
        return sorted({r.round for r in self.rounds if r.modes == modes})

    def cluster_losses(self, modes: int, round_number: int) -> Dict[int, float]:
        return {r.cluster: r.mean_loss for r in self.rounds if r.modes == modes and r.round == round_number}

    def final_total(self, modes: int) -> Optional[float]:
        totals = [t for t in self.totals if t.modes == modes]
        return totals[-1].total_loss if totals else None

    def note(self, message: str) -> None:
        logger.info(message)
        self.events.append(message)

    def to_dict(self) -> Dict:
        return {
            "rounds": [asdict(r) for r in self.rounds],
            "epochs": [asdict(e) for e in self.epochs],
            "totals": [asdict(t) for t in self.totals],
            "events": list(self.events),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainHistory":
        return cls(
            [RoundRecord(**r) for r in data.get("rounds", [])],
            [EpochRecord(**e) for e in data.get("epochs", [])],
            [TotalRecord(**t) for t in data.get("totals", [])],
            list(data.get("events", [])),
        )


def write_history(history: TrainHistory, json_path: str, csv_path: Optional[str] = None,
                  epochs_csv_path: Optional[str] = None) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(history.to_dict(), f, indent=2)
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["modes", "round", "cluster", "groups", "mean_loss", "retention"])
            for r in history.rounds:
                retention = "" if r.retention is None else f"{r.retention:.6g}"
                writer.writerow([r.modes, r.round, r.cluster, r.groups, f"{r.mean_loss:.6g}", retention])
    if epochs_csv_path:
        with open(epochs_csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["modes", "round", "cluster", "block_size", "epoch", "lr", "mean_loss"])
            for e in history.epochs:
                writer.writerow([e.modes, e.round, e.cluster, e.block_size, e.epoch,
                                 f"{e.lr:.6g}", f"{e.mean_loss:.6g}"])


def read_history(json_path: str) -> TrainHistory:
    with open(json_path, "r", encoding="utf-8") as f:
        return TrainHistory.from_dict(json.load(f))


# ============================================================
# RECOVERY QUALITY
# ============================================================

def sample_sse(net, refs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample SSE in pixel units, zero-centred domain"""
    out = np.empty(refs.shape[0])
    for start in range(0, refs.shape[0], _SSE_CHUNK):
        stop = start + _SSE_CHUNK
        diff = predict_block(net, refs[start:stop]) - targets[start:stop]
        out[start:stop] = np.sum(diff * diff, axis=1)
    return out


def _net_for(bank: ModeBank, block_size: int):
    if block_size not in bank:
        raise ConfigurationError(f"bank has no network for {block_size}x{block_size} blocks")
    return bank[block_size]


def group_loss(group, bank: ModeBank, dataset: TrainingSet) -> float:
    """Summed SSE of every TU of the group under the bank's per-size networks"""
    total = 0.0
    for block_size, index in group.members:
        net = _net_for(bank, block_size)
        s = dataset.sets[block_size]
        total += float(sample_sse(net, s.refs[index:index + 1], s.targets[index:index + 1])[0])
    return total


def group_pixels(dataset: TrainingSet) -> np.ndarray:
    pixels = np.zeros(dataset.num_groups)
    for n, index in dataset.group_index.items():
        pixels += np.bincount(index, minlength=dataset.num_groups) * (n * n)
    return pixels


def cluster_loss_matrix(dataset: TrainingSet, banks: Sequence[ModeBank]) -> np.ndarray:
    """losses[g, k] = group_loss of group position g under bank k"""
    losses = np.zeros((dataset.num_groups, len(banks)))
    for k, bank in enumerate(banks):
        for n, s in dataset.sets.items():
            sse = sample_sse(_net_for(bank, n), s.refs, s.targets)
            losses[:, k] += np.bincount(dataset.group_index[n], weights=sse, minlength=dataset.num_groups)
    return losses


def partition(dataset: TrainingSet, banks: Sequence[ModeBank], prev: Optional[Assignment] = None,
              losses: Optional[np.ndarray] = None) -> Assignment:
    """Each group goes to the cluster with the lowest group loss; ties to the lowest index"""
    if dataset.num_groups == 0:
        raise UsageError("cannot partition an empty dataset")
    if not banks:
        raise UsageError("partition needs at least one bank")
    if losses is None:
        losses = cluster_loss_matrix(dataset, banks)
    group_ids = np.array([g.group_id for g in dataset.groups], dtype=np.int64)
    round_number = 0 if prev is None else prev.round + 1
    return Assignment(group_ids, np.argmin(losses, axis=1).astype(np.int64), round_number)


def retention(prev: Assignment, nxt: Assignment) -> Dict[int, float]:
    """Fraction of each previous cluster's groups that stayed; emptied clusters are absent"""
    if prev.group_ids.shape != nxt.group_ids.shape or not np.array_equal(prev.group_ids, nxt.group_ids):
        raise UsageError("retention needs assignments over the same groups")
    rates = {}
    for cluster in np.unique(prev.clusters):
        members = prev.clusters == cluster
        rates[int(cluster)] = float(np.mean(nxt.clusters[members] == cluster))
    return rates


# ============================================================
# CLUSTER TRAINING
# ============================================================

def train_cluster(bank: ModeBank, members: TrainingSet, schedule: Schedule, batch_sizes: Dict[int, int],
                  gamma: float = 1e-4, momentum: float = 0.9, seed: int = 0,
                  on_epoch: Optional[Callable[[int, int, float, float], None]] = None) -> ModeBank:
    """
    Mini-batch SGD with momentum on every block size present in `members`.

    Works on copies; the input bank is left untouched. `on_epoch` receives
    (block_size, epoch, lr, mean_loss) after each epoch.
    """
    if len(members) == 0:
        raise UsageError("train_cluster needs at least one member sample")
    trained = {n: net.copy() for n, net in bank.items()}

    for n, s in members.sets.items():
        net = _net_for(trained, n)
        if n not in batch_sizes:
            raise ConfigurationError(f"no batch size configured for {n}x{n} blocks")
        batch_size = batch_sizes[n]
        rng = make_rng(derive_seed(seed, n))
        state = OptimizerState.for_network(net, momentum, gamma)
        refs = s.refs * net.value_scale
        targets = s.targets * net.value_scale

        for epoch in range(schedule.epochs):
            lr = lr_at(schedule, epoch)
            order = rng.permutation(len(s))
            total = 0.0
            for start in range(0, len(s), batch_size):
                batch = order[start:start + batch_size]
                out, cache = forward(net, refs[batch])
                y = targets[batch]
                diff = out - y
                total += float(np.sum(diff * diff)) / 2.0
                sgd_step(net, backward(net, cache, y, gamma), state, lr)
            mean_loss = total / len(s)
            logger.debug("N=%d epoch %d lr=%g loss=%.6g", n, epoch, lr, mean_loss)
            if on_epoch is not None:
                on_epoch(n, epoch, lr, mean_loss)
    return trained


# ============================================================
# RECURSIVE TRAINING
# ============================================================

def pretrain(dataset: TrainingSet, cfg: RunConfig, history: Optional[TrainHistory] = None) -> ModeBank:
    """Fresh networks for every block size in the data, trained on all of it"""
    history = history if history is not None else TrainHistory()
    if len(dataset) == 0:
        raise UsageError("cannot pretrain on an empty dataset")
    cfg.require_block_sizes(dataset.block_sizes, "the dataset")
    bank = {}
    for n in dataset.block_sizes:
        if n not in cfg.hidden_dims:
            raise ConfigurationError(f"no hidden width configured for {n}x{n} blocks")
        bank[n] = init_network(n, dataset.ref_lines, cfg.hidden_dims[n], cfg.depth,
                               derive_seed(cfg.seed, _PRETRAIN_INIT, n), cfg.unit_init, cfg.value_scale)
        bank[n].store_dtype = cfg.store_dtype

    logger.info("Pretraining sizes %s on %d samples in %d groups",
                dataset.block_sizes, len(dataset), dataset.num_groups)
    bank = train_cluster(bank, dataset, pretrain_schedule(cfg), cfg.batch_sizes, cfg.gamma, cfg.momentum,
                         derive_seed(cfg.seed, _CLUSTER_TRAIN, 1, 0, 0),
                         _epoch_recorder(history, 1, 0, 0))
    losses = cluster_loss_matrix(dataset, [bank])
    _record_round(history, dataset, losses, np.zeros(dataset.num_groups, dtype=np.int64), 1, 0, {})
    return bank


def _epoch_recorder(history: TrainHistory, modes: int, round_number: int, cluster: int):
    def record(block_size, epoch, lr, mean_loss):
        history.epochs.append(EpochRecord(modes, round_number, cluster, block_size, epoch, lr, mean_loss))
    return record


def _record_round(history: TrainHistory, dataset: TrainingSet, losses: np.ndarray, clusters: np.ndarray,
                  modes: int, round_number: int, rates: Dict[int, float]) -> float:
    pixels = group_pixels(dataset)
    own = losses[np.arange(len(clusters)), clusters]
    for cluster in range(modes):
        members = clusters == cluster
        mean_loss = float(own[members].sum() / pixels[members].sum()) if members.any() else float("nan")
        history.rounds.append(RoundRecord(modes, round_number, cluster, int(members.sum()),
                                          mean_loss, rates.get(cluster)))
    total = float(own.sum() / pixels.sum())
    history.totals.append(TotalRecord(modes, round_number, total))
    return total


def _respawn_empty(dataset: TrainingSet, banks: List[ModeBank], losses: np.ndarray, cfg: RunConfig,
                   history: TrainHistory, modes: int, round_number: int) -> Tuple[np.ndarray, np.ndarray]:
    """Replace empty clusters by re-splitting the lowest-loss cluster"""
    clusters = np.argmin(losses, axis=1)
    pixels = group_pixels(dataset)
    for attempt in range(modes):
        counts = np.bincount(clusters, minlength=modes)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            break
        own = losses[np.arange(len(clusters)), clusters]
        per_cluster = np.full(modes, np.inf)
        for c in np.nonzero(counts)[0]:
            members = clusters == c
            per_cluster[c] = own[members].sum() / pixels[members].sum()
        best = int(np.argmin(per_cluster))
        target = int(empty[0])
        split_cfg = SplitConfig(cfg.kappa, derive_seed(cfg.seed, _RESPAWN, modes, round_number, attempt),
                                cfg.perturb_bias, cfg.perturb_slopes)
        for n, net in banks[best].items():
            banks[best][n], banks[target][n] = split_network(net, split_cfg)
        logger.warning("Cluster %d got no groups in round %d; respawned from cluster %d",
                       target, round_number, best)
        history.events.append(f"respawn modes={modes} round={round_number} cluster={target} from={best}")
        losses = cluster_loss_matrix(dataset, banks)
        clusters = np.argmin(losses, axis=1)
    return losses, clusters


def _train_clusters(dataset: TrainingSet, banks: List[ModeBank], clusters: np.ndarray, cfg: RunConfig,
                    history: TrainHistory, modes: int, round_number: int) -> List[ModeBank]:
    schedule = recursive_schedule(cfg)

    def job(cluster: int):
        positions = np.nonzero(clusters == cluster)[0]
        if positions.size == 0:
            return banks[cluster], []
        epochs: List[EpochRecord] = []

        def record(block_size, epoch, lr, mean_loss):
            epochs.append(EpochRecord(modes, round_number, cluster, block_size, epoch, lr, mean_loss))

        trained = train_cluster(banks[cluster], dataset.subset_groups(positions), schedule, cfg.batch_sizes,
                                cfg.gamma, cfg.momentum,
                                derive_seed(cfg.seed, _CLUSTER_TRAIN, modes, round_number, cluster), record)
        return trained, epochs

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, range(modes)))
    else:
        results = [job(c) for c in range(modes)]

    for _, epochs in results:
        history.epochs.extend(epochs)
    return [bank for bank, _ in results]


def run_rounds(dataset: TrainingSet, banks: List[ModeBank], cfg: RunConfig,
               history: TrainHistory) -> Tuple[List[ModeBank], Assignment]:
    """Alternate partition and per-cluster training for up to cfg.rounds rounds"""
    modes = len(banks)
    banks = [dict(bank) for bank in banks]
    losses = cluster_loss_matrix(dataset, banks)
    group_ids = np.array([g.group_id for g in dataset.groups], dtype=np.int64)
    _record_round(history, dataset, losses, np.argmin(losses, axis=1), modes, 0, {})

    prev: Optional[Assignment] = None
    assignment = None
    for round_number in range(1, cfg.rounds + 1):
        losses, clusters = _respawn_empty(dataset, banks, losses, cfg, history, modes, round_number)
        assignment = Assignment(group_ids, clusters.astype(np.int64), round_number)
        rates = retention(prev, assignment) if prev is not None else {}

        banks = _train_clusters(dataset, banks, clusters, cfg, history, modes, round_number)
        losses = cluster_loss_matrix(dataset, banks)
        total = _record_round(history, dataset, losses, clusters, modes, round_number, rates)
        logger.info("K=%d round %d: sizes %s, total MSE %.4f, retention %s", modes, round_number,
                    assignment.counts(modes).tolist(), total,
                    {c: round(r, 3) for c, r in rates.items()} or "n/a")

        if rates and min(rates.values()) >= cfg.stop_threshold:
            history.note(f"K={modes}: retention {min(rates.values()):.3f} >= {cfg.stop_threshold} "
                         f"after round {round_number}; stopping early")
            break
        prev = assignment
    return banks, assignment


def run_recursive(dataset: TrainingSet, cfg: RunConfig, initial: Optional[List[ModeBank]] = None,
                  history: Optional[TrainHistory] = None) -> Tuple[List[ModeBank], TrainHistory]:
    """
    Grow the bank from `initial` (or a fresh pretrained network) to
    cfg.modes networks by repeated split + recursive rounds.
    """
    modes = cfg.modes
    if modes < 1 or modes & (modes - 1):
        raise ConfigurationError(f"mode count must be a power of two, got {modes}")
    history = history if history is not None else TrainHistory()

    banks = list(initial) if initial else [pretrain(dataset, cfg, history)]
    if len(banks) & (len(banks) - 1) or len(banks) > modes:
        raise ConfigurationError(f"cannot grow a bank of {len(banks)} networks to {modes}")
    missing = set(dataset.block_sizes) - set(banks[0])
    if missing:
        raise ConfigurationError(f"bank has no networks for block sizes {sorted(missing)}")

    while len(banks) < modes:
        before = float(np.min(cluster_loss_matrix(dataset, banks), axis=1).sum())
        split_cfg = SplitConfig(cfg.kappa, derive_seed(cfg.seed, _SPLIT, len(banks)),
                                cfg.perturb_bias, cfg.perturb_slopes)
        grown, _ = run_rounds(dataset, split_mode_banks(banks, split_cfg), cfg, history)
        after = float(np.min(cluster_loss_matrix(dataset, grown), axis=1).sum())
        gain = (before - after) / before if before > 0 else 0.0

        if cfg.min_split_gain is not None and gain < cfg.min_split_gain:
            history.note(f"split {len(banks)} -> {len(grown)} gained {gain:.4f} < {cfg.min_split_gain}; "
                         f"keeping {len(banks)} networks")
            break
        logger.info("Split %d -> %d networks: total loss %.6g -> %.6g (gain %.4f)",
                    len(banks), len(grown), before, after, gain)
        banks = grown

    return banks, history
