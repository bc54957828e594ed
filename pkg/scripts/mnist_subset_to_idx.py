"""Convert a CSV MNIST sample (784 pixel columns, label last) into IDX files.

Usage:
    python scripts/mnist_subset_to_idx.py mnist_5k.csv.gz data/mnist5k --train 2000 --val 500

Rows are shuffled with a fixed seed before the disjoint train/val slices
are taken, so the output is reproducible from the same CSV.
"""
import argparse
import gzip
from pathlib import Path

import numpy as np

from lbtest import datasets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--val", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    opener = gzip.open if args.csv.endswith(".gz") else open
    with opener(args.csv, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    xs, ys = table[:, :-1] / 255.0, table[:, -1].astype(np.int64)
    if xs.shape[1] != 784:
        raise SystemExit(f"expected 784 pixel columns, got {xs.shape[1]}")
    if args.train + args.val > len(ys):
        raise SystemExit(f"only {len(ys)} rows available")

    order = np.random.default_rng(args.seed).permutation(len(ys))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = {"train": order[:args.train], "val": order[args.train:args.train + args.val]}
    for name, rows in parts.items():
        ds = datasets.LabeledSet(xs[rows], ys[rows], 10)
        datasets.write_idx(ds, out / f"{name}-images-idx3-ubyte.gz", out / f"{name}-labels-idx1-ubyte.gz",
                           image_shape=(28, 28))
        print(f"{name}: {len(rows)} rows, class counts {np.bincount(ys[rows], minlength=10).tolist()}")


if __name__ == "__main__":
    main()
