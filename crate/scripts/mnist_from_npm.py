#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package into IDX files.

The package ships 10,000 MNIST digits as 784 floats in [0, 1] per image,
grouped by class. This script shuffles them with a fixed seed, splits them
into disjoint train and test parts and writes the four standard IDX files.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""

import argparse
import json
import random
import struct
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test", type=int, default=2000, help="images held out for testing")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        flat = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{label}.json: length {len(flat)} is not a multiple of 784")
        for k in range(0, len(flat), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in flat[k : k + 784]]
            samples.append((pixels, label))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[: args.test], samples[args.test :]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        write_images(args.out_dir / f"{prefix}-images-idx3-ubyte", [p for p, _ in part])
        write_labels(args.out_dir / f"{prefix}-labels-idx1-ubyte", [l for _, l in part])
    print(f"wrote {len(train)} training and {len(test)} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
