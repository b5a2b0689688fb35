"""
Subcommand handlers

Each handler takes the parsed arguments and a Session, does its work, and
returns a process exit code. The Session records produced files and writes
manifest.json (plus a ledger row when the run store is enabled).
"""

import hashlib
import json
import logging
import os
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from config import RunConfig
from dcdnn.corpus import build_corpus, load_planes, write_corpus
from dcdnn.dataset import DATASET_VERSION, LAYOUT_VERSION, load_training_set, read_manifest
from dcdnn.errors import UsageError
from dcdnn.evaluator import (
    REPORT_SCHEMA_VERSION,
    CostModel,
    decide_set,
    emit_report,
    evaluate_plane,
    read_decisions,
    render_mode_map,
    usage_rate,
    write_decisions,
)
from dcdnn.fcnet import BANK_VERSION, MODEL_VERSION, read_bank, write_bank
from dcdnn.run_store import RunStore
from dcdnn.selftest import run_selftest
from dcdnn.split import SplitConfig, split_mode_banks
from dcdnn.trainer import TrainHistory, partition, read_history, run_recursive, run_rounds, write_history

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Session:
    """Provenance for one subcommand invocation"""

    def __init__(self, command: str, argv: List[str], cfg: RunConfig, out_dir: str,
                 store: Optional[RunStore] = None):
        self.command = command
        self.argv = list(argv)
        self.cfg = cfg
        self.out_dir = out_dir
        self.store = store
        self.artifacts: List[Dict] = []
        self.extra: Dict = {}
        os.makedirs(out_dir, exist_ok=True)
        self.run_id = store.start_run(command, self.argv, cfg.echo(), cfg.seed) if store else None

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def add_artifact(self, path: str, kind: str) -> None:
        digest = sha256_file(path)
        self.artifacts.append({"path": os.path.relpath(path, self.out_dir), "kind": kind, "sha256": digest})
        if self.store:
            self.store.add_artifact(self.run_id, path, kind, digest)

    def save_history(self, history: TrainHistory) -> None:
        if self.store:
            self.store.save_history(self.run_id, history)

    def write_manifest(self) -> str:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg.echo(),
            "seeds": {"base": self.cfg.seed},
            "artifacts": self.artifacts,
            "formats": {
                "model": MODEL_VERSION,
                "bank": BANK_VERSION,
                "dataset": DATASET_VERSION,
                "reference_layout": LAYOUT_VERSION,
                "report": REPORT_SCHEMA_VERSION,
            },
        }
        manifest.update(self.extra)
        path = self.path(MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return path

    def finish(self, status: str = "ok", message: str = None) -> None:
        self.write_manifest()
        if self.store:
            self.store.finish_run(self.run_id, status, message)


def _require(value, flag: str, command: str):
    if not value:
        raise UsageError(f"{command} needs {flag}")
    return value


def _write_bank(session: Session, banks, default_name: str, out: Optional[str]) -> str:
    path = out or session.path(default_name)
    write_bank(banks, path)
    session.add_artifact(path, "bank")
    logger.info("Wrote %d network(s) per size to %s", len(banks), path)
    return path


def _write_history(session: Session, history: TrainHistory) -> None:
    paths = [session.path("history.json"), session.path("history.csv"), session.path("epochs.csv")]
    write_history(history, *paths)
    for path in paths:
        session.add_artifact(path, "history")
    session.save_history(history)


# ============================================================
# PIPELINE STAGES
# ============================================================

def extract_command(args, session: Session) -> int:
    images = list(args.images or [])
    if args.manifest:
        images += read_manifest(args.manifest)
    _require(images, "--images or --manifest", "extract")
    recons = load_planes(args.recon) if args.recon else None

    by_size, groups, stats = build_corpus(load_planes(images), session.cfg, recons)
    if not by_size:
        raise UsageError("extract produced no samples (images smaller than one PU, or all groups filtered)")
    for path in write_corpus(by_size, groups, session.out_dir):
        session.add_artifact(path, "dataset")
    session.extra["corpus"] = {
        "images": images,
        "groups_total": stats.groups_total,
        "groups_kept": stats.groups_kept,
        "samples_per_size": {str(n): c for n, c in stats.samples_per_size.items()},
    }
    print(f"[OK] {stats.groups_kept}/{stats.groups_total} groups kept; samples per size {stats.samples_per_size}")
    return 0


def pretrain_command(args, session: Session) -> int:
    dataset = load_training_set(_require(args.dataset, "--dataset", "pretrain"))
    cfg = session.cfg
    pretrain_cfg = replace(cfg, modes=1)
    banks, history = run_recursive(dataset, pretrain_cfg)
    _write_bank(session, banks, "pretrained.dcdb", args.out)
    _write_history(session, history)
    print(f"[OK] pretrained sizes {dataset.block_sizes}; final MSE {history.final_total(1):.4f}")
    return 0


def split_command(args, session: Session) -> int:
    banks = read_bank(_require(args.models, "--models", "split"))
    cfg = session.cfg
    doubled = split_mode_banks(banks, SplitConfig(cfg.kappa, cfg.seed, cfg.perturb_bias, cfg.perturb_slopes))
    _write_bank(session, doubled, "split.dcdb", args.out)
    print(f"[OK] split {len(banks)} -> {len(doubled)} networks per size")
    return 0


def train_command(args, session: Session) -> int:
    models = _require(args.models, "--models", "train")
    dataset = load_training_set(_require(args.dataset, "--dataset", "train"))
    cfg = session.cfg
    banks = read_bank(models)
    if len(banks) > cfg.modes:
        raise UsageError(f"bank already has {len(banks)} networks, more than modes={cfg.modes}")

    history = TrainHistory()
    if len(banks) > 1:
        banks, _ = run_rounds(dataset, banks, cfg, history)
    if len(banks) < cfg.modes:
        banks, history = run_recursive(dataset, cfg, initial=banks, history=history)

    _write_bank(session, banks, "trained.dcdb", args.out)
    _write_history(session, history)

    assignment = partition(dataset, banks)
    path = session.path("assignment.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("group_id,cluster\n")
        for gid, cluster in zip(assignment.group_ids, assignment.clusters):
            f.write(f"{gid},{cluster}\n")
    session.add_artifact(path, "assignment")
    counts = np.bincount(assignment.clusters, minlength=len(banks)).tolist()
    print(f"[OK] trained {len(banks)} modes; groups per mode {counts}")
    return 0


def evaluate_command(args, session: Session) -> int:
    banks = read_bank(_require(args.models, "--models", "evaluate"))
    if not args.dataset and not args.images:
        raise UsageError("evaluate needs --dataset or --images")
    cfg = session.cfg
    cost = CostModel.from_config(cfg, len(banks))

    decisions, baseline_only = [], []
    width = height = 0
    if args.dataset:
        dataset = load_training_set(args.dataset)
        for s in dataset.sets.values():
            decisions.extend(decide_set(s, banks, cost))
            baseline_only.extend(decide_set(s, [], cost))
    for image_id, plane in enumerate(load_planes(args.images or [])):
        image_decisions, w, h = evaluate_plane(plane, banks, cfg, cost, image_id)
        decisions.extend(image_decisions)
        baseline_only.extend(evaluate_plane(plane, [], cfg, cost, image_id)[0])
        map_path = session.path(f"mode_map_{image_id}.pgm")
        render_mode_map(image_decisions, plane.width, plane.height, len(banks), map_path)
        session.add_artifact(map_path, "mode_map")
        width, height = w, h

    for name, rows in (("decisions.csv", decisions), ("decisions_baseline.csv", baseline_only)):
        write_decisions(rows, session.path(name))
        session.add_artifact(session.path(name), "decisions")

    frame = (width, height) if args.images and len(args.images) == 1 and not args.dataset else None
    paths = emit_report(None, decisions, session.path("report"), len(banks), frame, banks, baseline_only)
    for path in paths.values():
        session.add_artifact(path, "report")
    session.extra["lambda"] = cost.lam

    area = frame or (sum(d.block_size ** 2 for d in decisions), 1)
    usage = usage_rate(decisions, *area) if decisions else 0.0
    print(f"[OK] {len(decisions)} blocks decided at lambda={cost.lam:.4g}; DCDNN usage {usage:.4f}")
    return 0


def report_command(args, session: Session) -> int:
    if args.run_id is not None:
        store = session.store or RunStore(args.db)
        history = store.get_history(args.run_id)
    elif args.history:
        history = read_history(args.history)
    else:
        history = None
    decisions = read_decisions(args.decisions) if args.decisions else []
    baseline_only = read_decisions(args.baseline_decisions) if args.baseline_decisions else None
    banks = read_bank(args.models) if args.models else None
    if history is None and not decisions and banks is None:
        raise UsageError("report needs --history, --run-id, --decisions or --models")

    modes = len(banks) if banks else max([d.mode + 1 for d in decisions if d.is_dcdnn] + [1])
    paths = emit_report(history, decisions, session.out_dir, modes, None, banks, baseline_only)
    for path in paths.values():
        session.add_artifact(path, "report")
    print(f"[OK] report tables written to {session.out_dir}")
    return 0


def selftest_command(args, session: Session) -> int:
    report = run_selftest(args.gradient_cases, args.split_cases, session.cfg.seed)
    session.extra["selftest"] = {
        "worst_gradient_error": max(report.gradient_errors, default=0.0),
        "worst_split_error": max(report.split_errors, default=0.0),
        "kappa_zero_identical": report.kappa_zero_identical,
        "passed": report.passed,
    }
    if not report.passed:
        print("[ERROR] selftest failed: " + json.dumps(session.extra["selftest"]))
        return 1
    print("[OK] gradient check and split symmetry passed")
    return 0


def runs_command(args, session: Optional[Session] = None) -> int:
    """Lists the ledger; records no run of its own"""
    store = RunStore(args.db)
    runs = store.list_runs(args.limit, args.filter_command)
    if not runs:
        print("[INFO] no runs recorded")
        return 0
    for run in runs:
        print(f"{run['id']:>5}  {run['command']:<9} {run['status']:<8} seed={run['seed']}  "
              f"{run['started_at']} -> {run['finished_at'] or '-'}")
    return 0


HANDLERS = {
    "extract": extract_command,
    "pretrain": pretrain_command,
    "split": split_command,
    "train": train_command,
    "evaluate": evaluate_command,
    "report": report_command,
    "selftest": selftest_command,
    "runs": runs_command,
}
