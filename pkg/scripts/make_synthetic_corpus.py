#!/usr/bin/env python3
"""
Synthetic Corpus Script
Writes a labelled gradient-family corpus as a .dcds dataset plus labels.csv,
and optionally a synthetic picture for end-to-end runs
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from dcdnn.dataset import write_dataset, write_pgm
from dcdnn.errors import DcdnnError
from dcdnn.synthetic import gradient_corpus, synthetic_plane


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write a labelled synthetic DCDNN corpus")
    parser.add_argument("--out-dir", default="./data/synthetic")
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--block-size", type=int, default=4)
    parser.add_argument("--ref-lines", type=int, default=2)
    parser.add_argument("--families", type=int, default=2, help="2 (h/v) or 4 (h/v, rising/falling)")
    parser.add_argument("--slope", type=float, default=8.0)
    parser.add_argument("--noise", type=float, default=2.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--picture", metavar="WxH", help="also write a synthetic picture of this size")
    args = parser.parse_args(argv)

    try:
        corpus = gradient_corpus(args.count, args.block_size, args.ref_lines, args.families,
                                 args.slope, args.noise, args.seed)
        os.makedirs(args.out_dir, exist_ok=True)
        dataset_path = os.path.join(args.out_dir, f"synthetic_N{args.block_size}.dcds")
        write_dataset(corpus.samples, corpus.groups, dataset_path)
        print(f"[INFO] Wrote {len(corpus.samples)} samples to {dataset_path}")

        labels_path = os.path.join(args.out_dir, "labels.csv")
        with open(labels_path, "w", encoding="utf-8") as f:
            f.write("group_id,label,family\n")
            for group, label in zip(corpus.groups, corpus.labels):
                f.write(f"{group.group_id},{label},{corpus.families[label]}\n")
        print(f"[INFO] Wrote labels to {labels_path}")

        if args.picture:
            width, height = (int(v) for v in args.picture.lower().split("x"))
            picture_path = os.path.join(args.out_dir, "synthetic.pgm")
            write_pgm(synthetic_plane(width, height, seed=args.seed), picture_path)
            print(f"[INFO] Wrote picture to {picture_path}")
    except (DcdnnError, OSError, ValueError) as e:
        print(f"[ERROR] {e}")
        return 1

    print("[OK] Synthetic corpus ready")
    return 0


if __name__ == '__main__':
    sys.exit(main())
