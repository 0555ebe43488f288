#!/usr/bin/env python3
"""Build IDX files from the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage: mnist_subset_from_npm.py <path-to-unpacked-npm-package> <out-dir>

The digits are stored per class as pixel intensities in [0, 1] rounded to three
decimals; they are mapped back to bytes with round(v * 255). Samples are
shuffled with a fixed seed and split into a 6000-image training pool and a
4000-image test set.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIZE = 28
TRAIN = 6000


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIZE, SIZE))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        for k in range(len(raw) // (SIZE * SIZE)):
            px = raw[k * SIZE * SIZE:(k + 1) * SIZE * SIZE]
            samples.append(([min(255, max(0, round(v * 255))) for v in px], digit))
    random.Random(20190117).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:TRAIN]), ("t10k", samples[TRAIN:])):
        write_images(out / f"{name}-images-idx3-ubyte.gz", [s[0] for s in part])
        write_labels(out / f"{name}-labels-idx1-ubyte.gz", [s[1] for s in part])
    print(f"wrote {TRAIN} training and {len(samples) - TRAIN} test samples to {out}")


if __name__ == "__main__":
    main()
