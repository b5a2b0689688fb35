#!/usr/bin/env python3
"""
DCDNN command line
Data-clustering-driven neural intra prediction: extract, pretrain, split,
train, evaluate, report, selftest
"""

import argparse
import logging
import sys

from config import config, load_run_config
from dcdnn.errors import DcdnnError
from dcdnn.handlers import HANDLERS, Session, runs_command
from dcdnn.run_store import RunStore

# Setup logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run config (default: $DCDNN_CONFIG)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
    common.add_argument("--seed", type=int, help="base seed (same as --set seed=...)")
    common.add_argument("--threads", type=int, help="worker threads for cluster training")
    common.add_argument("--db", default=config.RUN_DB_PATH, help="run ledger path")
    common.add_argument("--no-ledger", action="store_true", help="do not record the run in the ledger")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="dcdnn", description=__doc__.strip().splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="images -> per-size .dcds datasets")
    p.add_argument("--images", nargs="+", help="PGM (P5) or PNG images")
    p.add_argument("--manifest", help="text file listing one image per line")
    p.add_argument("--recon", nargs="+", help="reconstructed planes to take references from, one per image")
    p.add_argument("--block-size", type=int, help="tile every PU with NxN TUs (same as --tiling uniformN)")
    p.add_argument("--ref-lines", type=int)
    p.add_argument("--pu-size", type=int)
    p.add_argument("--tiling", help="mixed, uniformN or an explicit N@dx,dy list")
    p.add_argument("--filter", choices=("on", "off"), help="complexity filter")
    p.add_argument("--stride", type=int, help="PU grid step (default: the PU size)")

    p = sub.add_parser("pretrain", parents=[common], help="train one network per block size")
    p.add_argument("--dataset", nargs="+", help=".dcds files")
    p.add_argument("--out", help="bank path (default: <out-dir>/pretrained.dcdb)")
    p.add_argument("--paper-init", "--unit-init", dest="unit_init", action="store_true",
                   help="initial weights with std 1 instead of 1/sqrt(fan_in)")

    p = sub.add_parser("split", parents=[common], help="double a bank by mirrored noise")
    p.add_argument("--models", help="input .dcdb bank")
    p.add_argument("--kappa", type=float, help="noise scale relative to each layer's weight RMS")
    p.add_argument("--out", help="bank path (default: <out-dir>/split.dcdb)")

    p = sub.add_parser("train", parents=[common], help="recursive partition/train up to `modes` networks")
    p.add_argument("--models", help="input .dcdb bank (pretrained or split)")
    p.add_argument("--dataset", nargs="+", help=".dcds files")
    p.add_argument("--out", help="bank path (default: <out-dir>/trained.dcdb)")

    p = sub.add_parser("evaluate", parents=[common], help="RDO mode decision against the directional modes")
    p.add_argument("--models", help="trained .dcdb bank")
    p.add_argument("--dataset", nargs="+", help=".dcds files")
    p.add_argument("--images", "--image", dest="images", nargs="+", help="images to decide block by block")
    p.add_argument("--qp", type=int, help="quantisation parameter for lambda")
    p.add_argument("--lambda-override", type=float, help="use this lambda instead of the QP rule")

    p = sub.add_parser("report", parents=[common], help="report tables from history and decisions")
    p.add_argument("--history", help="history.json from pretrain/train")
    p.add_argument("--run-id", type=int, help="take the history from the ledger")
    p.add_argument("--decisions", help="decisions.csv from evaluate")
    p.add_argument("--baseline-decisions", help="decisions_baseline.csv from evaluate")
    p.add_argument("--models", help="bank for the model size table")

    p = sub.add_parser("selftest", parents=[common], help="gradient check and split symmetry")
    p.add_argument("--gradient-cases", type=int, default=50)
    p.add_argument("--split-cases", type=int, default=100)

    p = sub.add_parser("runs", help="list recorded runs")
    p.add_argument("--db", default=config.RUN_DB_PATH, help="run ledger path")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--command", dest="filter_command", help="only runs of this subcommand")
    p.add_argument("--verbose", "-v", action="store_true")

    return parser


_FLAG_KEYS = ("ref_lines", "pu_size", "tiling", "filter", "stride", "kappa", "qp", "lambda_override")


def _overrides(args) -> list:
    """--set pairs first, then dedicated flags (which win)"""
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    elif config.THREADS != 1:
        overrides.append(f"threads={config.THREADS}")
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "block_size", None) is not None:
        overrides.append(f"tiling=uniform{args.block_size}")
    if getattr(args, "unit_init", False):
        overrides.append("unit_init=true")
    return overrides


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command == "runs":
        try:
            return runs_command(args)
        except (DcdnnError, OSError) as e:
            print(f"[ERROR] {e}", file=sys.stderr)
            return 1

    try:
        cfg = load_run_config(args.config, _overrides(args))
        store = None if args.no_ledger else RunStore(args.db)
        session = Session(args.command, argv, cfg, args.out_dir, store)
    except (DcdnnError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1

    try:
        code = HANDLERS[args.command](args, session)
    except (DcdnnError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"[ERROR] {e}", file=sys.stderr)
        session.finish("failed", str(e))
        return 1

    session.finish("ok" if code == 0 else "failed")
    return code


if __name__ == '__main__':
    sys.exit(main())
